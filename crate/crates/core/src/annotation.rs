//! Cue protocol data model: cue sets, uncertainty labels, per-trial annotation
//! records, participant metadata, and their CSV contracts.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stimgen::Condition;

/// Participants at or below this age (in days) belong to the 4-year-old group.
pub const AGE_SPLIT_DAYS: u32 = 2150;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown cue column {0:?}")]
    UnknownCue(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: invalid label {value:?} (expected 0, 0.5, 1 or empty)")]
    InvalidLabel { line: u64, value: String },
    #[error("line {line}: duplicate trial_id {trial_id:?} for participant {participant_id:?} / annotator {annotator_id:?}")]
    DuplicateTrial {
        line: u64,
        trial_id: String,
        participant_id: String,
        annotator_id: String,
    },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("passes disagree on {field}: {left:?} vs {right:?}")]
    PassMismatch {
        field: &'static str,
        left: String,
        right: String,
    },
    #[error("protocol violation: verbal cue {0} set in the muted visual pass")]
    VerbalCueInVisualPass(Cue),
    #[error("no labeled records")]
    Empty,
}

/// Annotated behaviours, in protocol order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cue {
    Delay,
    EyebrowRaise,
    EyebrowScrunch,
    FilledPause,
    FrustratedNoise,
    FunnyFace,
    HandOnFace,
    HeadTilt,
    LookAway,
    LookToAdult,
    ShoulderMovement,
    Smile,
    VerbalCues,
}

impl Cue {
    pub const ALL: [Cue; 13] = [
        Cue::Delay,
        Cue::EyebrowRaise,
        Cue::EyebrowScrunch,
        Cue::FilledPause,
        Cue::FrustratedNoise,
        Cue::FunnyFace,
        Cue::HandOnFace,
        Cue::HeadTilt,
        Cue::LookAway,
        Cue::LookToAdult,
        Cue::ShoulderMovement,
        Cue::Smile,
        Cue::VerbalCues,
    ];

    /// The five cues predicted by the ensemble's first stage.
    pub const KEY: [Cue; 5] = [
        Cue::Delay,
        Cue::EyebrowRaise,
        Cue::EyebrowScrunch,
        Cue::LookToAdult,
        Cue::HandOnFace,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Cue::Delay => "delay",
            Cue::EyebrowRaise => "eyebrow_raise",
            Cue::EyebrowScrunch => "eyebrow_scrunch",
            Cue::FilledPause => "filled_pause",
            Cue::FrustratedNoise => "frustrated_noise",
            Cue::FunnyFace => "funny_face",
            Cue::HandOnFace => "hand_on_face",
            Cue::HeadTilt => "head_tilt",
            Cue::LookAway => "look_away",
            Cue::LookToAdult => "look_to_adult",
            Cue::ShoulderMovement => "shoulder_movement",
            Cue::Smile => "smile",
            Cue::VerbalCues => "verbal_cues",
        }
    }

    pub fn is_verbal(self) -> bool {
        matches!(
            self,
            Cue::FilledPause | Cue::FrustratedNoise | Cue::VerbalCues
        )
    }

    /// Whether the cue has a row in the published frequency statistics.
    pub fn in_published_statistics(self) -> bool {
        self != Cue::HeadTilt
    }
}

impl fmt::Display for Cue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Cue {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Cue::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| AnnotationError::UnknownCue(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CueSet {
    pub delay: bool,
    pub eyebrow_raise: bool,
    pub eyebrow_scrunch: bool,
    pub filled_pause: bool,
    pub frustrated_noise: bool,
    pub funny_face: bool,
    pub hand_on_face: bool,
    pub head_tilt: bool,
    pub look_away: bool,
    pub look_to_adult: bool,
    pub shoulder_movement: bool,
    pub smile: bool,
    pub verbal_cues: bool,
}

impl CueSet {
    pub fn get(&self, cue: Cue) -> bool {
        *self.slot(cue)
    }

    pub fn set(&mut self, cue: Cue, value: bool) {
        *self.slot_mut(cue) = value;
    }

    pub fn with(mut self, cue: Cue) -> Self {
        self.set(cue, true);
        self
    }

    fn slot(&self, cue: Cue) -> &bool {
        match cue {
            Cue::Delay => &self.delay,
            Cue::EyebrowRaise => &self.eyebrow_raise,
            Cue::EyebrowScrunch => &self.eyebrow_scrunch,
            Cue::FilledPause => &self.filled_pause,
            Cue::FrustratedNoise => &self.frustrated_noise,
            Cue::FunnyFace => &self.funny_face,
            Cue::HandOnFace => &self.hand_on_face,
            Cue::HeadTilt => &self.head_tilt,
            Cue::LookAway => &self.look_away,
            Cue::LookToAdult => &self.look_to_adult,
            Cue::ShoulderMovement => &self.shoulder_movement,
            Cue::Smile => &self.smile,
            Cue::VerbalCues => &self.verbal_cues,
        }
    }

    fn slot_mut(&mut self, cue: Cue) -> &mut bool {
        match cue {
            Cue::Delay => &mut self.delay,
            Cue::EyebrowRaise => &mut self.eyebrow_raise,
            Cue::EyebrowScrunch => &mut self.eyebrow_scrunch,
            Cue::FilledPause => &mut self.filled_pause,
            Cue::FrustratedNoise => &mut self.frustrated_noise,
            Cue::FunnyFace => &mut self.funny_face,
            Cue::HandOnFace => &mut self.hand_on_face,
            Cue::HeadTilt => &mut self.head_tilt,
            Cue::LookAway => &mut self.look_away,
            Cue::LookToAdult => &mut self.look_to_adult,
            Cue::ShoulderMovement => &mut self.shoulder_movement,
            Cue::Smile => &mut self.smile,
            Cue::VerbalCues => &mut self.verbal_cues,
        }
    }

    pub fn active(&self) -> impl Iterator<Item = Cue> + '_ {
        Cue::ALL.into_iter().filter(|c| self.get(*c))
    }

    pub fn is_empty(&self) -> bool {
        self.active().next().is_none()
    }

    pub fn physical(&self) -> CueSet {
        self.filtered(|c| !c.is_verbal())
    }

    pub fn verbal(&self) -> CueSet {
        self.filtered(Cue::is_verbal)
    }

    fn filtered(&self, keep: impl Fn(Cue) -> bool) -> CueSet {
        let mut out = CueSet::default();
        for c in self.active() {
            if keep(c) {
                out.set(c, true);
            }
        }
        out
    }

    pub fn union(&self, other: &CueSet) -> CueSet {
        let mut out = *self;
        for c in other.active() {
            out.set(c, true);
        }
        out
    }
}

/// 0 = not uncertain, 0.5 = unclear, 1 = uncertain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UncertaintyLabel {
    NotUncertain,
    Unclear,
    Uncertain,
}

impl UncertaintyLabel {
    pub const ALL: [UncertaintyLabel; 3] = [
        UncertaintyLabel::NotUncertain,
        UncertaintyLabel::Unclear,
        UncertaintyLabel::Uncertain,
    ];

    pub fn value(self) -> f64 {
        match self {
            UncertaintyLabel::NotUncertain => 0.0,
            UncertaintyLabel::Unclear => 0.5,
            UncertaintyLabel::Uncertain => 1.0,
        }
    }

    /// Class index used by the models: 0, 1, 2 for 0, 0.5, 1.
    pub fn class_index(self) -> usize {
        self as usize
    }

    pub fn from_class_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn from_value(v: f64) -> Option<Self> {
        if v == 0.0 {
            Some(UncertaintyLabel::NotUncertain)
        } else if v == 0.5 {
            Some(UncertaintyLabel::Unclear)
        } else if v == 1.0 {
            Some(UncertaintyLabel::Uncertain)
        } else {
            None
        }
    }

    fn csv_value(self) -> &'static str {
        match self {
            UncertaintyLabel::NotUncertain => "0",
            UncertaintyLabel::Unclear => "0.5",
            UncertaintyLabel::Uncertain => "1",
        }
    }
}

impl Serialize for UncertaintyLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for UncertaintyLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        UncertaintyLabel::from_value(v)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid label {v}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub trial_id: String,
    pub participant_id: String,
    pub annotator_id: String,
    /// `None` for exported trials that have not been annotated yet.
    pub label: Option<UncertaintyLabel>,
    pub correct: bool,
    pub transcript: String,
    pub cue_set: CueSet,
    pub latency_ms: Option<f64>,
}

impl AnnotationRecord {
    pub fn new(
        trial_id: impl Into<String>,
        participant_id: impl Into<String>,
        label: UncertaintyLabel,
    ) -> Self {
        Self {
            trial_id: trial_id.into(),
            participant_id: participant_id.into(),
            annotator_id: String::new(),
            label: Some(label),
            correct: true,
            transcript: String::new(),
            cue_set: CueSet::default(),
            latency_ms: None,
        }
    }
}

const FIXED_COLUMNS: [&str; 6] = [
    "trial_id",
    "participant_id",
    "annotator_id",
    "label",
    "correct",
    "transcript",
];
const LATENCY_COLUMN: &str = "latency_ms";

pub fn annotation_header() -> Vec<&'static str> {
    let mut h: Vec<&str> = FIXED_COLUMNS.to_vec();
    h.extend(Cue::ALL.iter().map(|c| c.name()));
    h
}

fn io_err(path: &Path, source: std::io::Error) -> AnnotationError {
    AnnotationError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn parse_annotation_file(
    path: impl AsRef<Path>,
) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    parse_annotations(file)
}

fn parse_bool_cell(cell: &str, line: u64, column: &str) -> Result<bool, AnnotationError> {
    match cell.trim() {
        "" | "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(AnnotationError::MalformedRow {
            line,
            reason: format!("column {column}: expected 1 or empty, got {other:?}"),
        }),
    }
}

pub fn parse_annotations<R: Read>(reader: R) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names.len() < FIXED_COLUMNS.len() || names[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
        return Err(AnnotationError::MalformedHeader(format!(
            "expected leading columns {FIXED_COLUMNS:?}, got {names:?}"
        )));
    }
    let mut cue_cols = Vec::new();
    let mut latency_col = None;
    for (i, name) in names.iter().enumerate().skip(FIXED_COLUMNS.len()) {
        if *name == LATENCY_COLUMN {
            latency_col = Some(i);
        } else {
            cue_cols.push((i, name.parse::<Cue>()?));
        }
    }
    let found: Vec<Cue> = cue_cols.iter().map(|(_, c)| *c).collect();
    if found != Cue::ALL {
        return Err(AnnotationError::MalformedHeader(format!(
            "cue columns must be the 13 protocol cues in order, got {:?}",
            found.iter().map(|c| c.name()).collect::<Vec<_>>()
        )));
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            AnnotationError::MalformedRow {
                line,
                reason: e.to_string(),
            }
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let label_cell = row[3].trim();
        let label = if label_cell.is_empty() {
            None
        } else {
            let parsed = label_cell
                .parse::<f64>()
                .ok()
                .and_then(UncertaintyLabel::from_value);
            match parsed {
                Some(l) => Some(l),
                None => {
                    return Err(AnnotationError::InvalidLabel {
                        line,
                        value: label_cell.to_string(),
                    })
                }
            }
        };
        let correct = parse_bool_cell(&row[4], line, "correct")?;
        let mut cue_set = CueSet::default();
        for (i, cue) in &cue_cols {
            cue_set.set(*cue, parse_bool_cell(&row[*i], line, cue.name())?);
        }
        let latency_ms = match latency_col {
            Some(i) if !row[i].trim().is_empty() => {
                let v: f64 = row[i]
                    .trim()
                    .parse()
                    .map_err(|_| AnnotationError::MalformedRow {
                        line,
                        reason: format!("latency_ms {:?} is not a number", &row[i]),
                    })?;
                Some(v)
            }
            _ => None,
        };
        let rec = AnnotationRecord {
            trial_id: row[0].trim().to_string(),
            participant_id: row[1].trim().to_string(),
            annotator_id: row[2].trim().to_string(),
            label,
            correct,
            transcript: row[5].to_string(),
            cue_set,
            latency_ms,
        };
        if rec.trial_id.is_empty() {
            return Err(AnnotationError::MalformedRow {
                line,
                reason: "empty trial_id".into(),
            });
        }
        let key = (
            rec.participant_id.clone(),
            rec.annotator_id.clone(),
            rec.trial_id.clone(),
        );
        if !seen.insert(key) {
            return Err(AnnotationError::DuplicateTrial {
                line,
                trial_id: rec.trial_id,
                participant_id: rec.participant_id,
                annotator_id: rec.annotator_id,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Writes records in the annotation CSV layout. A trailing `latency_ms` column
/// is emitted only when some record carries a latency.
pub fn write_annotations<W: Write>(
    writer: W,
    records: &[AnnotationRecord],
) -> Result<(), AnnotationError> {
    let with_latency = records.iter().any(|r| r.latency_ms.is_some());
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = annotation_header();
    if with_latency {
        header.push(LATENCY_COLUMN);
    }
    wtr.write_record(&header)?;
    for r in records {
        let mut row: Vec<String> = vec![
            r.trial_id.clone(),
            r.participant_id.clone(),
            r.annotator_id.clone(),
            r.label
                .map(|l| l.csv_value().to_string())
                .unwrap_or_default(),
            if r.correct { "1" } else { "0" }.to_string(),
            r.transcript.clone(),
        ];
        row.extend(
            Cue::ALL
                .iter()
                .map(|c| if r.cue_set.get(*c) { "1" } else { "" }.to_string()),
        );
        if with_latency {
            row.push(r.latency_ms.map(|v| v.to_string()).unwrap_or_default());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| AnnotationError::Io {
        path: "<writer>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn write_annotation_file(
    path: impl AsRef<Path>,
    records: &[AnnotationRecord],
) -> Result<(), AnnotationError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_annotations(file, records)
}

/// Combines the muted visual pass with the audio pass of the same trial.
pub fn merge_passes(
    visual_pass: &AnnotationRecord,
    audio_pass: &AnnotationRecord,
) -> Result<AnnotationRecord, AnnotationError> {
    for (field, a, b) in [
        ("trial_id", &visual_pass.trial_id, &audio_pass.trial_id),
        (
            "annotator_id",
            &visual_pass.annotator_id,
            &audio_pass.annotator_id,
        ),
        (
            "participant_id",
            &visual_pass.participant_id,
            &audio_pass.participant_id,
        ),
    ] {
        if a != b {
            return Err(AnnotationError::PassMismatch {
                field,
                left: a.clone(),
                right: b.clone(),
            });
        }
    }
    if let Some(c) = visual_pass.cue_set.verbal().active().next() {
        return Err(AnnotationError::VerbalCueInVisualPass(c));
    }
    Ok(AnnotationRecord {
        cue_set: visual_pass
            .cue_set
            .physical()
            .union(&audio_pass.cue_set.verbal()),
        label: audio_pass.label,
        correct: audio_pass.correct,
        transcript: audio_pass.transcript.clone(),
        latency_ms: audio_pass.latency_ms.or(visual_pass.latency_ms),
        ..visual_pass.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub uncertain: f64,
    pub unclear: f64,
    pub not_uncertain: f64,
    pub n: usize,
}

/// Label proportions over the labeled records.
pub fn label_distribution(
    records: &[AnnotationRecord],
) -> Result<LabelDistribution, AnnotationError> {
    let mut counts = [0usize; 3];
    for l in records.iter().filter_map(|r| r.label) {
        counts[l.class_index()] += 1;
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(AnnotationError::Empty);
    }
    let nf = n as f64;
    Ok(LabelDistribution {
        not_uncertain: counts[0] as f64 / nf,
        unclear: counts[1] as f64 / nf,
        uncertain: counts[2] as f64 / nf,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Other,
}

impl Gender {
    fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Other => "other",
        }
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Gender::Female),
            "male" | "m" => Ok(Gender::Male),
            "other" | "unspecified" | "" => Ok(Gender::Other),
            other => Err(format!("invalid gender {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeGroup {
    #[serde(rename = "4yo")]
    FourYearOld,
    #[serde(rename = "5yo")]
    FiveYearOld,
}

impl AgeGroup {
    pub fn of_age_days(age_days: u32) -> Self {
        if age_days <= AGE_SPLIT_DAYS {
            AgeGroup::FourYearOld
        } else {
            AgeGroup::FiveYearOld
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgeGroup::FourYearOld => "4yo",
            AgeGroup::FiveYearOld => "5yo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub participant_id: String,
    pub age_days: u32,
    pub gender: Gender,
    pub condition: Condition,
}

impl Participant {
    pub fn age_group(&self) -> AgeGroup {
        AgeGroup::of_age_days(self.age_days)
    }
}

const PARTICIPANT_COLUMNS: [&str; 4] = ["participant_id", "age_days", "gender", "condition"];

pub fn parse_participants<R: Read>(reader: R) -> Result<Vec<Participant>, AnnotationError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names != PARTICIPANT_COLUMNS {
        return Err(AnnotationError::MalformedHeader(format!(
            "expected {PARTICIPANT_COLUMNS:?}, got {names:?}"
        )));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| AnnotationError::MalformedRow { line, reason };
        let age_days: u32 = row[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("age_days {:?} is not a positive integer", &row[1])))?;
        if age_days == 0 {
            return Err(bad("age_days must be positive".into()));
        }
        let gender = row[2].parse::<Gender>().map_err(bad)?;
        let condition = row[3]
            .trim()
            .parse::<Condition>()
            .map_err(|e| bad(e.to_string()))?;
        let participant_id = row[0].trim().to_string();
        if !seen.insert(participant_id.clone()) {
            return Err(bad(format!("duplicate participant {participant_id:?}")));
        }
        out.push(Participant {
            participant_id,
            age_days,
            gender,
            condition,
        });
    }
    Ok(out)
}

pub fn parse_participants_file(
    path: impl AsRef<Path>,
) -> Result<Vec<Participant>, AnnotationError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    parse_participants(file)
}

pub fn write_participants_file(
    path: impl AsRef<Path>,
    participants: &[Participant],
) -> Result<(), AnnotationError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut wtr = csv::Writer::from_writer(file);
    wtr.write_record(PARTICIPANT_COLUMNS)?;
    for p in participants {
        wtr.write_record([
            p.participant_id.as_str(),
            &p.age_days.to_string(),
            p.gender.as_str(),
            p.condition.as_str(),
        ])?;
    }
    wtr.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_line() -> String {
        annotation_header().join(",")
    }

    fn parse_str(s: &str) -> Result<Vec<AnnotationRecord>, AnnotationError> {
        parse_annotations(s.as_bytes())
    }

    #[test]
    fn empty_cue_cell_is_false() {
        let csv = format!("{}\nt01,p1,a1,1,1,umm,,1,,1,,,,,,,,,\n", header_line());
        let recs = parse_str(&csv).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert!(!r.cue_set.delay);
        assert!(r.cue_set.eyebrow_raise);
        assert!(r.cue_set.filled_pause);
        assert_eq!(r.label, Some(UncertaintyLabel::Uncertain));
        assert_eq!(r.transcript, "umm");
    }

    #[test]
    fn invalid_label_is_located() {
        let csv = format!(
            "{}\nt01,p1,a1,0,1,,,,,,,,,,,,,,\nt02,p1,a1,0.7,1,,,,,,,,,,,,,,\n",
            header_line()
        );
        match parse_str(&csv) {
            Err(AnnotationError::InvalidLabel { line, value }) => {
                assert_eq!(line, 3);
                assert_eq!(value, "0.7");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_cue_column_rejected() {
        let csv = header_line().replace("smile", "grin") + "\n";
        assert!(matches!(parse_str(&csv), Err(AnnotationError::UnknownCue(c)) if c == "grin"));
    }

    #[test]
    fn duplicate_trial_rejected() {
        let row = "t01,p1,a1,0,1,,,,,,,,,,,,,,";
        let csv = format!("{}\n{row}\n{row}\n", header_line());
        assert!(matches!(
            parse_str(&csv),
            Err(AnnotationError::DuplicateTrial { line: 3, .. })
        ));
        // same trial, different participant is fine
        let csv = format!("{}\n{row}\nt01,p2,a1,0,1,,,,,,,,,,,,,,\n", header_line());
        assert_eq!(parse_str(&csv).unwrap().len(), 2);
    }

    #[test]
    fn malformed_row_has_line() {
        let csv = format!("{}\nt01,p1,a1,0,1\n", header_line());
        assert!(matches!(
            parse_str(&csv),
            Err(AnnotationError::MalformedRow { line: 2, .. })
        ));
        let csv = format!("{}\nt01,p1,a1,0,1,,x,,,,,,,,,,,,\n", header_line());
        assert!(matches!(
            parse_str(&csv),
            Err(AnnotationError::MalformedRow { line: 2, .. })
        ));
    }

    #[test]
    fn empty_label_is_unlabeled() {
        let csv = format!("{}\nt01,p1,,,0,,,,,,,,,,,,,,\n", header_line());
        let recs = parse_str(&csv).unwrap();
        assert_eq!(recs[0].label, None);
        assert!(matches!(
            label_distribution(&recs),
            Err(AnnotationError::Empty)
        ));
    }

    fn rec(cues: CueSet, label: UncertaintyLabel) -> AnnotationRecord {
        AnnotationRecord {
            cue_set: cues,
            annotator_id: "a".into(),
            ..AnnotationRecord::new("t01", "p1", label)
        }
    }

    #[test]
    fn merge_is_disjoint_union() {
        let v = rec(
            CueSet::default().with(Cue::Smile),
            UncertaintyLabel::NotUncertain,
        );
        let a = rec(
            CueSet::default().with(Cue::FilledPause),
            UncertaintyLabel::Uncertain,
        );
        let m = merge_passes(&v, &a).unwrap();
        assert_eq!(
            m.cue_set,
            CueSet::default().with(Cue::Smile).with(Cue::FilledPause)
        );
        assert_eq!(m.label, Some(UncertaintyLabel::Uncertain));

        let empty = merge_passes(
            &rec(CueSet::default(), UncertaintyLabel::NotUncertain),
            &rec(CueSet::default(), UncertaintyLabel::NotUncertain),
        )
        .unwrap();
        assert!(empty.cue_set.is_empty());
        assert_eq!(empty.label, Some(UncertaintyLabel::NotUncertain));
    }

    #[test]
    fn merge_rejects_protocol_violations() {
        let bad = rec(
            CueSet::default().with(Cue::FilledPause),
            UncertaintyLabel::Uncertain,
        );
        let a = rec(CueSet::default(), UncertaintyLabel::Uncertain);
        assert!(matches!(
            merge_passes(&bad, &a),
            Err(AnnotationError::VerbalCueInVisualPass(Cue::FilledPause))
        ));
        let mut other = a.clone();
        other.trial_id = "t02".into();
        assert!(matches!(
            merge_passes(&a, &other),
            Err(AnnotationError::PassMismatch {
                field: "trial_id",
                ..
            })
        ));
    }

    #[test]
    fn label_distribution_fixture() {
        // 1000 records split exactly as in the published label proportions
        let mut recs = Vec::new();
        for (label, n) in [
            (UncertaintyLabel::Uncertain, 138),
            (UncertaintyLabel::Unclear, 53),
            (UncertaintyLabel::NotUncertain, 809),
        ] {
            for i in 0..n {
                recs.push(AnnotationRecord::new(
                    format!("t{i}"),
                    format!("{label:?}"),
                    label,
                ));
            }
        }
        let d = label_distribution(&recs).unwrap();
        assert!((d.uncertain - 0.138).abs() < 1e-12);
        assert!((d.unclear - 0.053).abs() < 1e-12);
        assert!((d.not_uncertain - 0.809).abs() < 1e-12);
        assert!((d.uncertain + d.unclear + d.not_uncertain - 1.0).abs() < 1e-9);

        let all_one: Vec<_> = (0..5)
            .map(|i| AnnotationRecord::new(format!("t{i}"), "p", UncertaintyLabel::Uncertain))
            .collect();
        let d = label_distribution(&all_one).unwrap();
        assert_eq!((d.uncertain, d.unclear, d.not_uncertain), (1.0, 0.0, 0.0));
    }

    #[test]
    fn age_split() {
        assert_eq!(AgeGroup::of_age_days(2150), AgeGroup::FourYearOld);
        assert_eq!(AgeGroup::of_age_days(2151), AgeGroup::FiveYearOld);
    }

    #[test]
    fn participants_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let ps = vec![
            Participant {
                participant_id: "p1".into(),
                age_days: 1700,
                gender: Gender::Female,
                condition: Condition::EasyFirst,
            },
            Participant {
                participant_id: "p2".into(),
                age_days: 2200,
                gender: Gender::Other,
                condition: Condition::HardFirst,
            },
        ];
        write_participants_file(&path, &ps).unwrap();
        assert_eq!(parse_participants_file(&path).unwrap(), ps);
    }
}
