//! Synthetic trials with planted cue signals, calibrated to the published cue
//! frequencies and label split.
//!
//! Each trial draws a label from the prior (optionally tilted by difficulty
//! rank), then each cue from its label-conditional rate. Active cues add a
//! constant offset on a designated channel block over a random sub-window of
//! the modality; `delay` also pushes every cue window later. Verbal cues emit
//! text tokens carrying a cue-specific embedding offset. Gaussian noise covers
//! every real row.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{align, AlignedSample, FeatureBundle, FeatureError, Modality, SequenceLengths};
use crate::analysis::{CueFrequencyTable, Subset};
use crate::annotation::{AnnotationRecord, Cue, CueSet, Gender, Participant, UncertaintyLabel};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from};
use crate::stimgen::{
    build_schedule, trial_id_for_rank, Condition, Schedule, StimError, TRIALS_PER_SCHEDULE,
};

/// Published label split: not uncertain, unclear, uncertain.
pub const PUBLISHED_LABEL_PRIOR: [f64; 3] = [0.809, 0.053, 0.138];
/// Published share of correct trials.
pub const PUBLISHED_CORRECT_RATE: f64 = 0.793;
/// Clamping beyond this is reported as an inconsistency.
pub const RATE_TOLERANCE: f64 = 1e-6;

/// One row of the published cue distribution. Female/male columns are percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PublishedCueRow {
    pub cue: Cue,
    pub all: f64,
    pub uncertain: f64,
    pub hard: f64,
    pub easy: f64,
    pub female_pct: f64,
    pub male_pct: f64,
}

pub fn published_cue_rows() -> Vec<PublishedCueRow> {
    let row = |cue, all, uncertain, hard, easy, female_pct, male_pct| PublishedCueRow {
        cue,
        all,
        uncertain,
        hard,
        easy,
        female_pct,
        male_pct,
    };
    vec![
        row(Cue::Delay, 0.03, 0.17, 0.03, 0.02, 2.7, 2.93),
        row(Cue::EyebrowRaise, 0.05, 0.17, 0.06, 0.04, 4.94, 4.48),
        row(Cue::EyebrowScrunch, 0.06, 0.22, 0.07, 0.06, 6.49, 6.15),
        row(Cue::FilledPause, 0.03, 0.06, 0.03, 0.03, 5.17, 1.26),
        row(Cue::FunnyFace, 0.02, 0.07, 0.03, 0.01, 1.84, 1.49),
        row(Cue::HandOnFace, 0.17, 0.19, 0.16, 0.18, 16.44, 17.53),
        row(Cue::LookToAdult, 0.04, 0.1, 0.05, 0.03, 2.93, 4.02),
        row(Cue::LookAway, 0.03, 0.05, 0.03, 0.02, 2.36, 3.16),
        row(Cue::FrustratedNoise, 0.01, 0.02, 0.01, 0.01, 0.57, 0.8),
        row(Cue::ShoulderMovement, 0.01, 0.02, 0.01, 0.01, 0.29, 1.03),
        row(Cue::Smile, 0.12, 0.17, 0.12, 0.12, 11.15, 13.05),
        row(Cue::VerbalCues, 0.01, 0.02, 0.01, 0.01, 1.09, 0.92),
    ]
}

/// Marginal cue rates over all trials and over uncertain trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CueMarginals {
    pub cue: Cue,
    pub all: f64,
    pub uncertain: f64,
}

impl From<&PublishedCueRow> for CueMarginals {
    fn from(r: &PublishedCueRow) -> Self {
        Self {
            cue: r.cue,
            all: r.all,
            uncertain: r.uncertain,
        }
    }
}

pub fn marginals_from_table(table: &CueFrequencyTable) -> Vec<CueMarginals> {
    Cue::ALL
        .iter()
        .map(|&cue| CueMarginals {
            cue,
            all: table.rate(cue, Subset::All),
            uncertain: table.rate(cue, Subset::Uncertain),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCueRate {
    pub cue: Cue,
    pub given_uncertain: f64,
    pub given_not_uncertain: f64,
}

impl ConditionalCueRate {
    /// Activation probability for a label; unclear trials use the midpoint.
    pub fn given(&self, label: UncertaintyLabel) -> f64 {
        match label {
            UncertaintyLabel::Uncertain => self.given_uncertain,
            UncertaintyLabel::NotUncertain => self.given_not_uncertain,
            UncertaintyLabel::Unclear => 0.5 * (self.given_uncertain + self.given_not_uncertain),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedCueRates {
    pub rates: Vec<ConditionalCueRate>,
    /// Cues whose solved rate had to be clamped by more than the tolerance.
    pub clamped: Vec<Cue>,
}

/// Solves all = prior·P(c|uncertain) + (1 − prior)·P(c|not) for P(c|not).
pub fn derive_cue_rates(marginals: &[CueMarginals], prior_uncertain: f64) -> DerivedCueRates {
    let mut rates = Vec::with_capacity(marginals.len());
    let mut clamped = Vec::new();
    for m in marginals {
        let raw = if prior_uncertain < 1.0 {
            (m.all - prior_uncertain * m.uncertain) / (1.0 - prior_uncertain)
        } else {
            m.all
        };
        let solved = raw.clamp(0.0, 1.0);
        if (solved - raw).abs() > RATE_TOLERANCE {
            clamped.push(m.cue);
        }
        rates.push(ConditionalCueRate {
            cue: m.cue,
            given_uncertain: m.uncertain.clamp(0.0, 1.0),
            given_not_uncertain: solved,
        });
    }
    DerivedCueRates { rates, clamped }
}

/// Conditional rates for every cue, derived from the published table; cues
/// absent from the table never activate.
pub fn published_conditional_rates(prior_uncertain: f64) -> Vec<ConditionalCueRate> {
    let marginals: Vec<CueMarginals> = published_cue_rows()
        .iter()
        .map(CueMarginals::from)
        .collect();
    let derived = derive_cue_rates(&marginals, prior_uncertain);
    Cue::ALL
        .iter()
        .map(|&cue| {
            derived
                .rates
                .iter()
                .find(|r| r.cue == cue)
                .copied()
                .unwrap_or(ConditionalCueRate {
                    cue,
                    given_uncertain: 0.0,
                    given_not_uncertain: 0.0,
                })
        })
        .collect()
}

/// Channel block carrying a cue's signal. For text, the block is the token
/// embedding offset of the cue's emitted tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueChannel {
    pub cue: Cue,
    pub modality: Modality,
    pub start: usize,
    pub width: usize,
}

/// Text dims carrying the offset of non-cue speech tokens.
pub const SPEECH_TEXT_BLOCK: (usize, usize) = (24, 6);

pub fn default_channel_layout() -> Vec<CueChannel> {
    let mut out = Vec::new();
    let physical = Cue::ALL.iter().copied().filter(|c| !c.is_verbal());
    for (k, cue) in physical.enumerate() {
        out.push(CueChannel {
            cue,
            modality: Modality::Video,
            start: 16 * k,
            width: 8,
        });
    }
    let verbal = [Cue::FilledPause, Cue::FrustratedNoise, Cue::VerbalCues];
    for (k, cue) in verbal.into_iter().enumerate() {
        out.push(CueChannel {
            cue,
            modality: Modality::Audio,
            start: 10 * k,
            width: 6,
        });
        out.push(CueChannel {
            cue,
            modality: Modality::Text,
            start: 6 * k,
            width: 6,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub trials: usize,
    /// Probabilities of labels 0, 0.5, 1.
    pub label_prior: [f64; 3],
    pub cue_rates: Vec<ConditionalCueRate>,
    pub channels: Vec<CueChannel>,
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub speech_prob: f64,
    pub lengths: SequenceLengths,
    pub frame_rate: usize,
    /// Change in P(uncertain) from the easiest to the hardest rank; 0 disables.
    pub uncertainty_gradient: f64,
    pub correct_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            trials: 2_000,
            label_prior: PUBLISHED_LABEL_PRIOR,
            cue_rates: published_conditional_rates(PUBLISHED_LABEL_PRIOR[2]),
            channels: default_channel_layout(),
            amplitude: 1.0,
            noise_sigma: 0.25,
            speech_prob: 0.1,
            lengths: SequenceLengths::default(),
            frame_rate: 30,
            uncertainty_gradient: 0.0,
            correct_rate: PUBLISHED_CORRECT_RATE,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::InvalidConfig(m));
        let sum: f64 = self.label_prior.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.label_prior.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad(format!(
                "label prior {:?} is not a probability vector",
                self.label_prior
            ));
        }
        // noise 0 is allowed for noiseless fixtures
        if !(self.noise_sigma >= 0.0) || !self.amplitude.is_finite() {
            return bad("noise sigma must be non-negative and amplitude finite".into());
        }
        if !(0.0..=1.0).contains(&self.speech_prob) || !(0.0..=1.0).contains(&self.correct_rate) {
            return bad("speech_prob and correct_rate must lie in [0, 1]".into());
        }
        for r in &self.cue_rates {
            if !(0.0..=1.0).contains(&r.given_uncertain)
                || !(0.0..=1.0).contains(&r.given_not_uncertain)
            {
                return bad(format!("cue rate for {} outside [0, 1]", r.cue));
            }
        }
        for c in &self.channels {
            if c.width == 0 || c.start + c.width > c.modality.dim() {
                return bad(format!(
                    "channel block {}..{} of {} exceeds {} dims",
                    c.start,
                    c.start + c.width,
                    c.cue,
                    c.modality
                ));
            }
        }
        if self.lengths.video == 0
            || self.lengths.audio == 0
            || self.lengths.text == 0
            || self.frame_rate == 0
        {
            return bad("sequence lengths and frame rate must be positive".into());
        }
        if self.uncertainty_gradient.abs() > 2.0 {
            return bad("uncertainty gradient out of range".into());
        }
        Ok(())
    }

    fn rate(&self, cue: Cue) -> Option<&ConditionalCueRate> {
        self.cue_rates.iter().find(|r| r.cue == cue)
    }

    /// Label probabilities (0, 0.5, 1) at a difficulty rank.
    pub fn label_probs_at_rank(&self, rank: u32) -> [f64; 3] {
        let [_, unclear, uncertain] = self.label_prior;
        let centered = (rank as f64 - 15.5) / (TRIALS_PER_SCHEDULE as f64 - 1.0);
        let unc = (uncertain + self.uncertainty_gradient * centered).clamp(0.0, 1.0 - unclear);
        [1.0 - unclear - unc, unclear, unc]
    }
}

/// Ground truth for one synthetic trial, without features.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDraw {
    pub sample_id: String,
    pub trial_id: String,
    pub participant_id: String,
    pub difficulty_rank: u32,
    pub label: UncertaintyLabel,
    pub cues: CueSet,
    pub correct: bool,
}

/// Deterministic per-trial generator; trial `i` depends only on (config, i).
#[derive(Debug, Clone)]
pub struct SynthGenerator {
    config: SynthConfig,
    participants: Vec<Participant>,
}

const STREAM_PARTICIPANT: u64 = 1 << 40;
const STREAM_FEATURES: u64 = 1 << 41;

impl SynthGenerator {
    pub fn new(config: SynthConfig) -> Result<Self, FeatureError> {
        config.validate()?;
        let n_participants = config.trials.div_ceil(TRIALS_PER_SCHEDULE);
        let participants = (0..n_participants)
            .map(|p| {
                let mut rng = rng_from(derive_seed(config.seed, STREAM_PARTICIPANT + p as u64));
                Participant {
                    participant_id: format!("p{p:04}"),
                    age_days: rng.random_range(1500..=2550),
                    gender: if rng.random_bool(0.5) {
                        Gender::Female
                    } else {
                        Gender::Male
                    },
                    condition: if rng.random_bool(0.5) {
                        Condition::EasyFirst
                    } else {
                        Condition::HardFirst
                    },
                }
            })
            .collect();
        Ok(Self {
            config,
            participants,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.config.trials
    }

    pub fn is_empty(&self) -> bool {
        self.config.trials == 0
    }

    pub fn participants(&self) -> &[Participant] {
        &self.participants
    }

    /// Reference schedule defining trial ids, ranks and pairs.
    pub fn schedule(&self) -> Result<Schedule, StimError> {
        build_schedule(Condition::EasyFirst, self.config.seed)
    }

    pub fn draw(&self, i: usize) -> TrialDraw {
        let cfg = &self.config;
        let participant = &self.participants[i / TRIALS_PER_SCHEDULE];
        let pos = (i % TRIALS_PER_SCHEDULE) as u32;
        let rank = match participant.condition {
            Condition::EasyFirst => pos + 1,
            Condition::HardFirst => TRIALS_PER_SCHEDULE as u32 - pos,
        };
        let mut rng = rng_from(derive_seed(cfg.seed, i as u64));
        let probs = cfg.label_probs_at_rank(rank);
        let u: f64 = rng.random();
        let label = if u < probs[0] {
            UncertaintyLabel::NotUncertain
        } else if u < probs[0] + probs[1] {
            UncertaintyLabel::Unclear
        } else {
            UncertaintyLabel::Uncertain
        };
        let mut cues = CueSet::default();
        for cue in Cue::ALL {
            let p = cfg.rate(cue).map_or(0.0, |r| r.given(label));
            let u: f64 = rng.random();
            cues.set(cue, u < p);
        }
        let correct = rng.random::<f64>() < cfg.correct_rate;
        let trial_id = trial_id_for_rank(rank);
        TrialDraw {
            sample_id: format!("{}-{trial_id}", participant.participant_id),
            trial_id,
            participant_id: participant.participant_id.clone(),
            difficulty_rank: rank,
            label,
            cues,
            correct,
        }
    }

    /// Annotation records for every trial (no features rendered).
    pub fn annotations(&self) -> Vec<AnnotationRecord> {
        (0..self.len())
            .map(|i| {
                let d = self.draw(i);
                AnnotationRecord {
                    trial_id: d.trial_id,
                    participant_id: d.participant_id,
                    annotator_id: "synth".into(),
                    label: Some(d.label),
                    correct: d.correct,
                    transcript: String::new(),
                    cue_set: d.cues,
                    latency_ms: None,
                }
            })
            .collect()
    }

    /// Raw feature streams for trial `i`.
    pub fn bundle<T: Scalar>(&self, i: usize) -> FeatureBundle<T> {
        let draw = self.draw(i);
        self.render(i, &draw)
    }

    /// Aligned sample for trial `i`, keyed by its unique sample id.
    pub fn sample<T: Scalar>(&self, i: usize) -> AlignedSample<T> {
        let draw = self.draw(i);
        let bundle = self.render(i, &draw);
        let mut s = align(&bundle, &self.config.lengths, draw.label, draw.cues);
        s.participant_id = Some(draw.participant_id);
        s
    }

    fn render<T: Scalar>(&self, i: usize, draw: &TrialDraw) -> FeatureBundle<T> {
        let cfg = &self.config;
        let mut rng = rng_from(derive_seed(cfg.seed, STREAM_FEATURES + i as u64));
        let lv = cfg.lengths.video;
        let t_v = rng.random_range((3 * lv).div_ceil(4)..=lv).max(1);
        let t_a = t_v.div_ceil(cfg.frame_rate).clamp(1, cfg.lengths.audio);
        let mut video = Array2::<f64>::zeros((t_v, Modality::Video.dim()));
        let mut audio = Array2::<f64>::zeros((t_a, Modality::Audio.dim()));

        // Fraction of the trial by which `delay` pushes every cue window later.
        let latency = if draw.cues.delay {
            rng.random_range(0.1..0.25)
        } else {
            0.0
        };

        let mut tokens: Vec<Vec<f64>> = Vec::new();
        for cue in draw.cues.active() {
            for ch in cfg.channels.iter().filter(|c| c.cue == cue) {
                match ch.modality {
                    Modality::Text => {
                        let n = rng.random_range(1..=5);
                        for _ in 0..n {
                            let mut tok = vec![0.0; Modality::Text.dim()];
                            tok[ch.start..ch.start + ch.width]
                                .iter_mut()
                                .for_each(|v| *v = cfg.amplitude);
                            tokens.push(tok);
                        }
                    }
                    m => {
                        let stream = if m == Modality::Video {
                            &mut video
                        } else {
                            &mut audio
                        };
                        let len = stream.nrows();
                        let w = rng.random_range(len.div_ceil(4).max(1)..=len.div_ceil(2).max(1));
                        let start = rng.random_range(0..=len - w);
                        let shift = (latency * len as f64).round() as usize;
                        let start = (start + shift).min(len - w);
                        for r in start..start + w {
                            for c in ch.start..ch.start + ch.width {
                                stream[[r, c]] += cfg.amplitude;
                            }
                        }
                    }
                }
            }
        }
        if rng.random_bool(cfg.speech_prob) {
            let n = rng.random_range(1..=4);
            let (s, w) = SPEECH_TEXT_BLOCK;
            for _ in 0..n {
                let mut tok = vec![0.0; Modality::Text.dim()];
                tok[s..s + w].iter_mut().for_each(|v| *v = cfg.amplitude);
                tokens.push(tok);
            }
        }
        tokens.shuffle(&mut rng);
        let mut text = Array2::<f64>::zeros((tokens.len(), Modality::Text.dim()));
        for (r, tok) in tokens.iter().enumerate() {
            text.row_mut(r)
                .iter_mut()
                .zip(tok)
                .for_each(|(d, &v)| *d = v);
        }

        if cfg.noise_sigma > 0.0 {
            for m in [&mut video, &mut audio, &mut text] {
                m.mapv_inplace(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + cfg.noise_sigma * z
                });
            }
        }
        let conv = |m: Array2<f64>| m.mapv(T::from_f64_lossy);
        FeatureBundle {
            trial_id: draw.sample_id.clone(),
            video: conv(video),
            audio: conv(audio),
            text: conv(text),
        }
    }
}

/// Generates every trial of `config` in memory.
pub fn generate_synthetic_dataset<T: Scalar>(
    config: SynthConfig,
) -> Result<Vec<AlignedSample<T>>, FeatureError> {
    let generator = SynthGenerator::new(config)?;
    Ok((0..generator.len()).map(|i| generator.sample(i)).collect())
}
