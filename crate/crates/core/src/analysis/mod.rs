//! Descriptive statistics over annotated trials: difficulty and correctness
//! correlations, cue frequency tables, and demographic breakdowns.

mod pearson;
mod report;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{AgeGroup, AnnotationRecord, Cue, Gender, Participant, UncertaintyLabel};
use crate::stimgen::{hard_easy_class, Condition, Difficulty, NumberPair, Schedule, StimError};

pub use pearson::{pearson, pearson_r, CorrelationResult, DEFAULT_PERMUTATIONS};
pub use report::{emit_distribution_report, AnalysisReport, NamedCorrelation};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("zero variance: correlation undefined")]
    ZeroVariance,
    #[error("trial {0:?} does not appear in any schedule")]
    UnmappedTrial(String),
    #[error("no participant metadata for {0:?}")]
    MissingParticipant(String),
    #[error("schedules disagree on trial {0:?}")]
    InconsistentSchedules(String),
    #[error("no labeled records")]
    Empty,
    #[error(transparent)]
    Stim(#[from] StimError),
    #[error("cannot write report: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialInfo {
    pub difficulty_rank: u32,
    pub pair: NumberPair,
    pub area_congruent: bool,
    pub difficulty: Difficulty,
}

/// trial_id → trial properties, assembled from one or more schedules.
#[derive(Debug, Clone, Default)]
pub struct TrialIndex {
    trials: HashMap<String, TrialInfo>,
}

impl TrialIndex {
    pub fn from_schedules<'a>(
        schedules: impl IntoIterator<Item = &'a Schedule>,
    ) -> Result<Self, AnalysisError> {
        let mut trials: HashMap<String, TrialInfo> = HashMap::new();
        for s in schedules {
            for t in &s.trials {
                let info = TrialInfo {
                    difficulty_rank: t.difficulty_rank,
                    pair: t.pair.clone(),
                    area_congruent: t.area_congruent,
                    difficulty: hard_easy_class(&t.pair)?,
                };
                match trials.get(&t.trial_id) {
                    Some(existing) if *existing != info => {
                        return Err(AnalysisError::InconsistentSchedules(t.trial_id.clone()))
                    }
                    Some(_) => {}
                    None => {
                        trials.insert(t.trial_id.clone(), info);
                    }
                }
            }
        }
        Ok(Self { trials })
    }

    pub fn get(&self, trial_id: &str) -> Result<&TrialInfo, AnalysisError> {
        self.trials
            .get(trial_id)
            .ok_or_else(|| AnalysisError::UnmappedTrial(trial_id.to_string()))
    }
}

fn participant_map(participants: &[Participant]) -> HashMap<&str, &Participant> {
    participants
        .iter()
        .map(|p| (p.participant_id.as_str(), p))
        .collect()
}

fn lookup<'a>(
    map: &HashMap<&str, &'a Participant>,
    id: &str,
) -> Result<&'a Participant, AnalysisError> {
    map.get(id)
        .copied()
        .ok_or_else(|| AnalysisError::MissingParticipant(id.to_string()))
}

fn labeled(
    records: &[AnnotationRecord],
) -> impl Iterator<Item = (&AnnotationRecord, UncertaintyLabel)> {
    records.iter().filter_map(|r| r.label.map(|l| (r, l)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DifficultyPooling {
    /// One point per difficulty rank (30 points).
    ByRank,
    /// One point per (condition, rank) cell (60 points when both conditions contribute).
    #[default]
    ByRankAndCondition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyPoint {
    pub condition: Option<Condition>,
    pub difficulty_rank: u32,
    pub trials: usize,
    /// Fraction of trials labeled exactly 1 (unclear trials are not counted as uncertain).
    pub uncertain_share: f64,
    pub correct_rate: f64,
}

/// Per-rank uncertain share and correctness rate over labeled records.
pub fn uncertainty_by_difficulty(
    records: &[AnnotationRecord],
    index: &TrialIndex,
    participants: &[Participant],
    pooling: DifficultyPooling,
) -> Result<Vec<DifficultyPoint>, AnalysisError> {
    let pmap = participant_map(participants);
    // (condition, rank) -> (trials, uncertain, correct)
    let mut cells: BTreeMap<(Option<u8>, u32), (usize, usize, usize)> = BTreeMap::new();
    for (r, label) in labeled(records) {
        let rank = index.get(&r.trial_id)?.difficulty_rank;
        let cond = match pooling {
            DifficultyPooling::ByRank => None,
            DifficultyPooling::ByRankAndCondition => {
                Some(lookup(&pmap, &r.participant_id)?.condition as u8)
            }
        };
        let cell = cells.entry((cond, rank)).or_default();
        cell.0 += 1;
        cell.1 += usize::from(label == UncertaintyLabel::Uncertain);
        cell.2 += usize::from(r.correct);
    }
    Ok(cells
        .into_iter()
        .map(|((cond, rank), (n, unc, cor))| DifficultyPoint {
            condition: cond.map(|c| {
                if c == Condition::EasyFirst as u8 {
                    Condition::EasyFirst
                } else {
                    Condition::HardFirst
                }
            }),
            difficulty_rank: rank,
            trials: n,
            uncertain_share: unc as f64 / n as f64,
            correct_rate: cor as f64 / n as f64,
        })
        .collect())
}

/// Correlation between difficulty rank and uncertain share.
pub fn difficulty_correlation(
    points: &[DifficultyPoint],
    permutations: usize,
    seed: u64,
) -> Result<CorrelationResult<f64>, AnalysisError> {
    let x: Vec<f64> = points.iter().map(|p| p.difficulty_rank as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.uncertain_share).collect();
    pearson(&x, &y, permutations, seed)
}

/// Correlation between per-rank uncertain share and per-rank correctness rate.
pub fn uncertainty_vs_correctness(
    points: &[DifficultyPoint],
    permutations: usize,
    seed: u64,
) -> Result<CorrelationResult<f64>, AnalysisError> {
    let x: Vec<f64> = points.iter().map(|p| p.uncertain_share).collect();
    let y: Vec<f64> = points.iter().map(|p| p.correct_rate).collect();
    pearson(&x, &y, permutations, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    All,
    Uncertain,
    Hard,
    Easy,
    Female,
    Male,
}

impl Subset {
    pub const ALL: [Subset; 6] = [
        Subset::All,
        Subset::Uncertain,
        Subset::Hard,
        Subset::Easy,
        Subset::Female,
        Subset::Male,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Uncertain => "uncertain",
            Subset::Hard => "hard",
            Subset::Easy => "easy",
            Subset::Female => "female",
            Subset::Male => "male",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueFrequencyTable {
    /// Trials per subset, indexed like `Subset::ALL`.
    pub subset_trials: [usize; 6],
    /// Trials exhibiting each cue per subset, indexed `[cue][subset]`.
    pub cue_counts: [[usize; 6]; 13],
}

impl CueFrequencyTable {
    pub fn rate(&self, cue: Cue, subset: Subset) -> f64 {
        let n = self.subset_trials[subset as usize];
        if n == 0 {
            0.0
        } else {
            self.cue_counts[cue.index()][subset as usize] as f64 / n as f64
        }
    }

    pub fn count(&self, cue: Cue, subset: Subset) -> usize {
        self.cue_counts[cue.index()][subset as usize]
    }
}

/// Cue rates across the six subsets over labeled records.
pub fn cue_frequencies(
    records: &[AnnotationRecord],
    participants: &[Participant],
    index: &TrialIndex,
) -> Result<CueFrequencyTable, AnalysisError> {
    let pmap = participant_map(participants);
    let mut table = CueFrequencyTable {
        subset_trials: [0; 6],
        cue_counts: [[0; 6]; 13],
    };
    for (r, label) in labeled(records) {
        let p = lookup(&pmap, &r.participant_id)?;
        let info = index.get(&r.trial_id)?;
        let member = [
            true,
            label == UncertaintyLabel::Uncertain,
            info.difficulty == Difficulty::Hard,
            info.difficulty == Difficulty::Easy,
            p.gender == Gender::Female,
            p.gender == Gender::Male,
        ];
        for (s, &inside) in member.iter().enumerate() {
            if !inside {
                continue;
            }
            table.subset_trials[s] += 1;
            for cue in r.cue_set.active() {
                table.cue_counts[cue.index()][s] += 1;
            }
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRate {
    pub group: String,
    pub participants: usize,
    pub trials: usize,
    pub uncertain_trials: usize,
    pub uncertain_rate: f64,
    pub mean_age_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicSummary {
    pub groups: Vec<GroupRate>,
    /// Mean participant age over uncertain trials.
    pub mean_age_uncertain_trials: Option<f64>,
    /// Mean participant age over all other labeled trials.
    pub mean_age_other_trials: Option<f64>,
}

impl DemographicSummary {
    pub fn group(&self, name: &str) -> Option<&GroupRate> {
        self.groups.iter().find(|g| g.group == name)
    }
}

/// Uncertain-trial rates and mean ages per gender and per age group.
pub fn demographic_summary(
    records: &[AnnotationRecord],
    participants: &[Participant],
) -> Result<DemographicSummary, AnalysisError> {
    let pmap = participant_map(participants);
    #[derive(Default)]
    struct Acc {
        ids: std::collections::BTreeSet<String>,
        age_sum: f64,
        trials: usize,
        uncertain: usize,
    }
    let mut groups: BTreeMap<&'static str, Acc> = BTreeMap::new();
    let (mut unc_age, mut unc_n, mut oth_age, mut oth_n) = (0.0, 0usize, 0.0, 0usize);
    let mut any = false;
    for (r, label) in labeled(records) {
        any = true;
        let p = lookup(&pmap, &r.participant_id)?;
        let is_unc = label == UncertaintyLabel::Uncertain;
        let gender = match p.gender {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Other => "other",
        };
        for key in [gender, p.age_group().as_str()] {
            let acc = groups.entry(key).or_default();
            if acc.ids.insert(p.participant_id.clone()) {
                acc.age_sum += p.age_days as f64;
            }
            acc.trials += 1;
            acc.uncertain += usize::from(is_unc);
        }
        if is_unc {
            unc_age += p.age_days as f64;
            unc_n += 1;
        } else {
            oth_age += p.age_days as f64;
            oth_n += 1;
        }
    }
    if !any {
        return Err(AnalysisError::Empty);
    }
    let groups = groups
        .into_iter()
        .map(|(name, acc)| GroupRate {
            group: name.to_string(),
            participants: acc.ids.len(),
            trials: acc.trials,
            uncertain_trials: acc.uncertain,
            uncertain_rate: acc.uncertain as f64 / acc.trials as f64,
            mean_age_days: acc.age_sum / acc.ids.len() as f64,
        })
        .collect();
    Ok(DemographicSummary {
        groups,
        mean_age_uncertain_trials: (unc_n > 0).then(|| unc_age / unc_n as f64),
        mean_age_other_trials: (oth_n > 0).then(|| oth_age / oth_n as f64),
    })
}

/// Splits participants into age groups; every participant lands in exactly one.
pub fn partition_by_age(participants: &[Participant]) -> BTreeMap<AgeGroup, Vec<&Participant>> {
    let mut out: BTreeMap<AgeGroup, Vec<&Participant>> = BTreeMap::new();
    for p in participants {
        out.entry(p.age_group()).or_default().push(p);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub permutations: usize,
    pub seed: u64,
    pub pooling: DifficultyPooling,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
            pooling: DifficultyPooling::default(),
        }
    }
}

/// Runs every analysis and collects the results for reporting.
pub fn analyze(
    records: &[AnnotationRecord],
    participants: &[Participant],
    schedules: &[Schedule],
    cfg: &AnalysisConfig,
) -> Result<AnalysisReport, AnalysisError> {
    let index = TrialIndex::from_schedules(schedules)?;
    let labels =
        crate::annotation::label_distribution(records).map_err(|_| AnalysisError::Empty)?;
    let difficulty = uncertainty_by_difficulty(records, &index, participants, cfg.pooling)?;
    let mut correlations = Vec::new();
    for (name, res) in [
        (
            "uncertainty_vs_difficulty",
            difficulty_correlation(&difficulty, cfg.permutations, cfg.seed),
        ),
        (
            "uncertainty_vs_correctness",
            uncertainty_vs_correctness(&difficulty, cfg.permutations, cfg.seed.wrapping_add(1)),
        ),
    ] {
        // An undefined correlation (e.g. no uncertain trials at all) is reported, not fatal.
        correlations.push(NamedCorrelation {
            name: name.to_string(),
            result: res.ok(),
        });
    }
    Ok(AnalysisReport {
        labels,
        difficulty,
        correlations,
        cues: cue_frequencies(records, participants, &index)?,
        demographics: demographic_summary(records, participants)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::CueSet;
    use crate::stimgen::build_schedule;

    fn participant(id: &str, gender: Gender, age: u32, condition: Condition) -> Participant {
        Participant {
            participant_id: id.into(),
            age_days: age,
            gender,
            condition,
        }
    }

    fn index() -> TrialIndex {
        TrialIndex::from_schedules(&[build_schedule(Condition::EasyFirst, 0).unwrap()]).unwrap()
    }

    #[test]
    fn all_zero_labels_give_zero_shares() {
        let ps = vec![participant("p", Gender::Female, 1800, Condition::EasyFirst)];
        let recs: Vec<_> = (1..=30)
            .map(|r| AnnotationRecord::new(format!("t{r:02}"), "p", UncertaintyLabel::NotUncertain))
            .collect();
        let pts =
            uncertainty_by_difficulty(&recs, &index(), &ps, DifficultyPooling::ByRank).unwrap();
        assert_eq!(pts.len(), 30);
        assert!(pts.iter().all(|p| p.uncertain_share == 0.0));
    }

    #[test]
    fn constructed_linear_share_gives_unit_r() {
        // rank k has 30 trials, k of them uncertain
        let mut ps = Vec::new();
        let mut recs = Vec::new();
        for j in 0..30 {
            let pid = format!("p{j}");
            ps.push(participant(&pid, Gender::Male, 2000, Condition::EasyFirst));
            for rank in 1..=30u32 {
                let label = if (j as u32) < rank {
                    UncertaintyLabel::Uncertain
                } else {
                    UncertaintyLabel::NotUncertain
                };
                recs.push(AnnotationRecord::new(
                    format!("t{rank:02}"),
                    pid.clone(),
                    label,
                ));
            }
        }
        let pts =
            uncertainty_by_difficulty(&recs, &index(), &ps, DifficultyPooling::ByRank).unwrap();
        for p in &pts {
            assert!((p.uncertain_share - p.difficulty_rank as f64 / 30.0).abs() < 1e-12);
        }
        let res = difficulty_correlation(&pts, 100, 0).unwrap();
        assert!((res.r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correct_iff_not_uncertain_gives_minus_one() {
        let mut ps = Vec::new();
        let mut recs = Vec::new();
        for j in 0..10 {
            let pid = format!("p{j}");
            ps.push(participant(&pid, Gender::Male, 2000, Condition::HardFirst));
            for rank in 1..=30u32 {
                let unc = (j * 3) < rank;
                let mut r = AnnotationRecord::new(
                    format!("t{rank:02}"),
                    pid.clone(),
                    if unc {
                        UncertaintyLabel::Uncertain
                    } else {
                        UncertaintyLabel::NotUncertain
                    },
                );
                r.correct = !unc;
                recs.push(r);
            }
        }
        let pts =
            uncertainty_by_difficulty(&recs, &index(), &ps, DifficultyPooling::ByRankAndCondition)
                .unwrap();
        let res = uncertainty_vs_correctness(&pts, 100, 0).unwrap();
        assert!((res.r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn unmapped_and_missing_metadata() {
        let ps = vec![participant("p", Gender::Female, 1800, Condition::EasyFirst)];
        let recs = vec![AnnotationRecord::new(
            "t99",
            "p",
            UncertaintyLabel::Uncertain,
        )];
        assert_eq!(
            uncertainty_by_difficulty(&recs, &index(), &ps, DifficultyPooling::ByRank),
            Err(AnalysisError::UnmappedTrial("t99".into()))
        );
        let recs = vec![AnnotationRecord::new(
            "t01",
            "q",
            UncertaintyLabel::Uncertain,
        )];
        assert_eq!(
            cue_frequencies(&recs, &ps, &index()),
            Err(AnalysisError::MissingParticipant("q".into()))
        );
    }

    #[test]
    fn empty_cues_give_zero_rates_and_counts_add_up() {
        let ps = vec![
            participant("f", Gender::Female, 1800, Condition::EasyFirst),
            participant("m", Gender::Male, 2300, Condition::HardFirst),
            participant("o", Gender::Other, 2300, Condition::HardFirst),
        ];
        let mut recs = Vec::new();
        for pid in ["f", "m", "o"] {
            for rank in 1..=30u32 {
                recs.push(AnnotationRecord::new(
                    format!("t{rank:02}"),
                    pid,
                    UncertaintyLabel::NotUncertain,
                ));
            }
        }
        let t = cue_frequencies(&recs, &ps, &index()).unwrap();
        for cue in Cue::ALL {
            for s in Subset::ALL {
                assert_eq!(t.rate(cue, s), 0.0);
            }
        }
        assert_eq!(t.subset_trials[Subset::All as usize], 90);
        assert_eq!(
            t.subset_trials[Subset::Hard as usize] + t.subset_trials[Subset::Easy as usize],
            90
        );
        assert_eq!(t.subset_trials[Subset::Hard as usize], 45);
        assert_eq!(t.subset_trials[Subset::Female as usize], 30);
    }

    #[test]
    fn cue_rates_in_subsets() {
        let ps = vec![participant("f", Gender::Female, 1800, Condition::EasyFirst)];
        let mut a = AnnotationRecord::new("t30", "f", UncertaintyLabel::Uncertain);
        a.cue_set = CueSet::default().with(Cue::EyebrowScrunch);
        let b = AnnotationRecord::new("t01", "f", UncertaintyLabel::NotUncertain);
        let t = cue_frequencies(&[a, b], &ps, &index()).unwrap();
        assert_eq!(t.rate(Cue::EyebrowScrunch, Subset::All), 0.5);
        assert_eq!(t.rate(Cue::EyebrowScrunch, Subset::Uncertain), 1.0);
        assert_eq!(t.rate(Cue::EyebrowScrunch, Subset::Hard), 1.0);
        assert_eq!(t.rate(Cue::EyebrowScrunch, Subset::Easy), 0.0);
        assert_eq!(t.rate(Cue::EyebrowScrunch, Subset::Male), 0.0);
    }

    #[test]
    fn single_participant_group_rate() {
        let ps = vec![participant("p", Gender::Female, 2500, Condition::EasyFirst)];
        let recs: Vec<_> = (1..=4)
            .map(|r| {
                AnnotationRecord::new(
                    format!("t{r:02}"),
                    "p",
                    if r == 1 {
                        UncertaintyLabel::Uncertain
                    } else {
                        UncertaintyLabel::NotUncertain
                    },
                )
            })
            .collect();
        let d = demographic_summary(&recs, &ps).unwrap();
        assert_eq!(d.group("female").unwrap().uncertain_rate, 0.25);
        assert_eq!(d.group("5yo").unwrap().uncertain_rate, 0.25);
        assert_eq!(d.group("5yo").unwrap().mean_age_days, 2500.0);
        assert!(d.group("4yo").is_none());
    }

    #[test]
    fn age_partition_is_exhaustive_and_disjoint() {
        let ps: Vec<_> = (0..50)
            .map(|i| {
                participant(
                    &format!("p{i}"),
                    Gender::Other,
                    1900 + i * 11,
                    Condition::EasyFirst,
                )
            })
            .collect();
        let parts = partition_by_age(&ps);
        let total: usize = parts.values().map(Vec::len).sum();
        assert_eq!(total, ps.len());
        for p in &parts[&AgeGroup::FourYearOld] {
            assert!(p.age_days <= 2150);
        }
        for p in &parts[&AgeGroup::FiveYearOld] {
            assert!(p.age_days > 2150);
        }
    }
}
