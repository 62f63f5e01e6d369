//! Dot-comparison stimuli: canonical number pairs, non-overlapping dot arrays
//! with cumulative-area control, and Easy-First / Hard-First schedules.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_seed, rng_from};

/// Number of trials in a schedule.
pub const TRIALS_PER_SCHEDULE: usize = 30;
/// Repetitions of each canonical pair in a schedule.
pub const REPS_PER_PAIR: usize = 5;
/// Pairs at or below this computed ratio are "hard".
pub const HARD_RATIO_CEILING: f64 = 1.17;
/// Feasibility limit: total dot area as a fraction of the canvas.
pub const MAX_AREA_FRACTION: f64 = 0.2;

const MAX_RESTARTS: usize = 64;
const ATTEMPTS_PER_DOT: usize = 2_000;

#[derive(Debug, Error, PartialEq)]
pub enum StimError {
    #[error("dot count must be positive")]
    NonPositiveCount,
    #[error("target area {target} is infeasible for a {width}x{height} canvas (limit {limit})")]
    InfeasibleArea {
        target: f64,
        width: f64,
        height: f64,
        limit: f64,
    },
    #[error("could not place {count} dots after {restarts} restarts")]
    PlacementFailed { count: u32, restarts: usize },
    #[error("pair {0}:{1} is not one of the canonical pairs")]
    NonCanonicalPair(u32, u32),
    #[error("invalid condition tag {0:?}")]
    InvalidCondition(String),
    #[error("incongruency factor must lie in (0, 1), got {0}")]
    InvalidFactor(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumberPair {
    pub left_count: u32,
    pub right_count: u32,
    /// Ratio as printed in the task description; kept for reference only.
    pub nominal_ratio: f64,
    /// max(count) / min(count). All ordering and classification use this.
    pub computed_ratio: f64,
}

impl NumberPair {
    pub fn new(left_count: u32, right_count: u32, nominal_ratio: f64) -> Self {
        let hi = left_count.max(right_count) as f64;
        let lo = left_count.min(right_count) as f64;
        Self {
            left_count,
            right_count,
            nominal_ratio,
            computed_ratio: hi / lo,
        }
    }

    pub fn larger(&self) -> u32 {
        self.left_count.max(self.right_count)
    }

    pub fn smaller(&self) -> u32 {
        self.left_count.min(self.right_count)
    }

    pub fn is_canonical(&self) -> bool {
        canonical_pairs()
            .iter()
            .any(|c| c.left_count == self.left_count && c.right_count == self.right_count)
    }
}

/// The six pairs used by the task, in the order they are listed in the protocol.
pub fn canonical_pairs() -> Vec<NumberPair> {
    vec![
        NumberPair::new(10, 9, 1.11),
        NumberPair::new(8, 7, 1.25),
        NumberPair::new(14, 12, 1.17),
        NumberPair::new(10, 8, 1.13),
        NumberPair::new(9, 6, 1.5),
        NumberPair::new(10, 5, 2.0),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Difficulty {
    #[serde(rename = "hard")]
    Hard,
    #[serde(rename = "easy")]
    Easy,
}

pub fn hard_easy_class(pair: &NumberPair) -> Result<Difficulty, StimError> {
    if !pair.is_canonical() {
        return Err(StimError::NonCanonicalPair(
            pair.left_count,
            pair.right_count,
        ));
    }
    // Computed ratios are exact quotients of small integers; 14/12 sits just below 1.17.
    if pair.computed_ratio <= HARD_RATIO_CEILING {
        Ok(Difficulty::Hard)
    } else {
        Ok(Difficulty::Easy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dot {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

impl Dot {
    pub fn area(&self) -> f64 {
        PI * self.radius * self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: f64,
    pub height: f64,
}

impl Canvas {
    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

impl Default for Canvas {
    fn default() -> Self {
        Self {
            width: 300.0,
            height: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotArray {
    pub dots: Vec<Dot>,
    pub canvas_width: f64,
    pub canvas_height: f64,
    pub cumulative_area: f64,
}

impl DotArray {
    pub fn count(&self) -> usize {
        self.dots.len()
    }

    /// True if no pair of dots touches or overlaps.
    pub fn is_non_overlapping(&self) -> bool {
        for (i, a) in self.dots.iter().enumerate() {
            for b in &self.dots[i + 1..] {
                let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
                if d <= a.radius + b.radius {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_in_bounds(&self) -> bool {
        self.dots.iter().all(|d| {
            d.x - d.radius >= 0.0
                && d.y - d.radius >= 0.0
                && d.x + d.radius <= self.canvas_width
                && d.y + d.radius <= self.canvas_height
        })
    }
}

/// Places `count` equal-radius dots whose areas sum to `target_area`.
pub fn generate_dot_array(
    count: u32,
    target_area: f64,
    canvas: Canvas,
    seed: u64,
) -> Result<DotArray, StimError> {
    if count == 0 {
        return Err(StimError::NonPositiveCount);
    }
    let limit = MAX_AREA_FRACTION * canvas.area();
    if !(target_area > 0.0) || target_area > limit {
        return Err(StimError::InfeasibleArea {
            target: target_area,
            width: canvas.width,
            height: canvas.height,
            limit,
        });
    }
    let radius = (target_area / (count as f64 * PI)).sqrt();
    if 2.0 * radius >= canvas.width.min(canvas.height) {
        return Err(StimError::InfeasibleArea {
            target: target_area,
            width: canvas.width,
            height: canvas.height,
            limit,
        });
    }

    place_dots(count, radius, canvas, seed, MAX_RESTARTS, ATTEMPTS_PER_DOT)
}

fn place_dots(
    count: u32,
    radius: f64,
    canvas: Canvas,
    seed: u64,
    restarts: usize,
    attempts: usize,
) -> Result<DotArray, StimError> {
    let mut rng = rng_from(seed);
    for _ in 0..restarts {
        let mut dots: Vec<Dot> = Vec::with_capacity(count as usize);
        'place: while dots.len() < count as usize {
            for _ in 0..attempts {
                let x = rng.random_range(radius..=canvas.width - radius);
                let y = rng.random_range(radius..=canvas.height - radius);
                let clear = dots.iter().all(|d| {
                    let dist2 = (d.x - x).powi(2) + (d.y - y).powi(2);
                    dist2 > (d.radius + radius).powi(2)
                });
                if clear {
                    dots.push(Dot { x, y, radius });
                    continue 'place;
                }
            }
            break;
        }
        if dots.len() == count as usize {
            let cumulative_area = dots.iter().map(Dot::area).sum();
            return Ok(DotArray {
                dots,
                canvas_width: canvas.width,
                canvas_height: canvas.height,
                cumulative_area,
            });
        }
    }
    Err(StimError::PlacementFailed { count, restarts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "left")]
    Left,
    #[serde(rename = "right")]
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(format!("invalid side {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusConfig {
    pub canvas: Canvas,
    /// Dot radius of the smaller-count array.
    pub base_radius: f64,
    /// Area of the greater-count array relative to the smaller one on incongruent trials.
    pub incongruency_factor: f64,
    pub display_ms: u32,
}

impl Default for StimulusConfig {
    fn default() -> Self {
        Self {
            canvas: Canvas::default(),
            base_radius: 12.0,
            incongruency_factor: 0.8,
            display_ms: 2500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub trial_id: String,
    pub pair: NumberPair,
    pub left_array: DotArray,
    pub right_array: DotArray,
    pub greater_side: Side,
    pub area_congruent: bool,
    pub display_ms: u32,
    pub difficulty_rank: u32,
}

impl TrialSpec {
    pub fn array(&self, side: Side) -> &DotArray {
        match side {
            Side::Left => &self.left_array,
            Side::Right => &self.right_array,
        }
    }
}

pub fn generate_trial(
    pair: &NumberPair,
    congruent: bool,
    seed: u64,
) -> Result<TrialSpec, StimError> {
    generate_trial_with(pair, congruent, seed, &StimulusConfig::default())
}

pub fn generate_trial_with(
    pair: &NumberPair,
    congruent: bool,
    seed: u64,
    cfg: &StimulusConfig,
) -> Result<TrialSpec, StimError> {
    if !pair.is_canonical() {
        return Err(StimError::NonCanonicalPair(
            pair.left_count,
            pair.right_count,
        ));
    }
    if !(cfg.incongruency_factor > 0.0 && cfg.incongruency_factor < 1.0) {
        return Err(StimError::InvalidFactor(cfg.incongruency_factor));
    }
    let mut rng = rng_from(derive_seed(seed, 0));
    let greater_side = if rng.random_bool(0.5) {
        Side::Left
    } else {
        Side::Right
    };

    let small_area = pair.smaller() as f64 * PI * cfg.base_radius * cfg.base_radius;
    let large_area = if congruent {
        pair.larger() as f64 * PI * cfg.base_radius * cfg.base_radius
    } else {
        cfg.incongruency_factor * small_area
    };
    let greater = generate_dot_array(pair.larger(), large_area, cfg.canvas, derive_seed(seed, 1))?;
    let lesser = generate_dot_array(pair.smaller(), small_area, cfg.canvas, derive_seed(seed, 2))?;
    let (left_array, right_array) = match greater_side {
        Side::Left => (greater, lesser),
        Side::Right => (lesser, greater),
    };
    Ok(TrialSpec {
        trial_id: String::new(),
        pair: pair.clone(),
        left_array,
        right_array,
        greater_side,
        area_congruent: congruent,
        display_ms: cfg.display_ms,
        difficulty_rank: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    EasyFirst,
    HardFirst,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::EasyFirst => "EasyFirst",
            Condition::HardFirst => "HardFirst",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = StimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "EasyFirst" | "easy-first" | "easy_first" => Ok(Condition::EasyFirst),
            "HardFirst" | "hard-first" | "hard_first" => Ok(Condition::HardFirst),
            other => Err(StimError::InvalidCondition(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub condition: Condition,
    pub trials: Vec<TrialSpec>,
    pub seed: u64,
}

/// Trial identifier for a difficulty rank. Identical across conditions and seeds.
pub fn trial_id_for_rank(rank: u32) -> String {
    format!("t{rank:02}")
}

/// (pair, congruent) for each of the 30 positions of the canonical Easy-First order.
pub fn canonical_order() -> Vec<(NumberPair, bool)> {
    let mut pairs = canonical_pairs();
    pairs.sort_by(|a, b| b.computed_ratio.total_cmp(&a.computed_ratio));
    let mut order = Vec::with_capacity(TRIALS_PER_SCHEDULE);
    for (i, pair) in pairs.into_iter().enumerate() {
        let congruent_reps = if i % 2 == 0 { 3 } else { 2 };
        for rep in 0..REPS_PER_PAIR {
            order.push((pair.clone(), rep < congruent_reps));
        }
    }
    order
}

pub fn build_schedule(condition: Condition, seed: u64) -> Result<Schedule, StimError> {
    build_schedule_with(condition, seed, &StimulusConfig::default())
}

pub fn build_schedule_with(
    condition: Condition,
    seed: u64,
    cfg: &StimulusConfig,
) -> Result<Schedule, StimError> {
    let mut trials = Vec::with_capacity(TRIALS_PER_SCHEDULE);
    for (pos, (pair, congruent)) in canonical_order().into_iter().enumerate() {
        let rank = pos as u32 + 1;
        let mut trial = generate_trial_with(&pair, congruent, derive_seed(seed, rank as u64), cfg)?;
        trial.trial_id = trial_id_for_rank(rank);
        trial.difficulty_rank = rank;
        trials.push(trial);
    }
    if condition == Condition::HardFirst {
        trials.reverse();
    }
    Ok(Schedule {
        condition,
        trials,
        seed,
    })
}

impl Schedule {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn trial(&self, trial_id: &str) -> Option<&TrialSpec> {
        self.trials.iter().find(|t| t.trial_id == trial_id)
    }
}
