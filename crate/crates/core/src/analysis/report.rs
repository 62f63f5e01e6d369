use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    AnalysisError, CorrelationResult, CueFrequencyTable, DemographicSummary, DifficultyPoint,
    Subset,
};
use crate::annotation::{Cue, LabelDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCorrelation {
    pub name: String,
    /// `None` when the correlation is undefined for this data.
    pub result: Option<CorrelationResult<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub labels: LabelDistribution,
    pub difficulty: Vec<DifficultyPoint>,
    pub correlations: Vec<NamedCorrelation>,
    pub cues: CueFrequencyTable,
    pub demographics: DemographicSummary,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<(), AnalysisError> {
    let io = |e: csv::Error| AnalysisError::Io(format!("{}: {e}", path.display()));
    let mut wtr = csv::Writer::from_path(path).map_err(io)?;
    for row in rows {
        wtr.write_record(row).map_err(io)?;
    }
    wtr.flush()
        .map_err(|e| AnalysisError::Io(format!("{}: {e}", path.display())))
}

fn row<I: IntoIterator<Item = S>, S: ToString>(cells: I) -> Vec<String> {
    cells.into_iter().map(|c| c.to_string()).collect()
}

/// Writes the plot-ready report bundle into `dir`:
///
/// - `correlations.csv`: name, r, n, df, p_value
/// - `cue_frequencies.csv`: cue, subset, rate, count, subset_trials, in_published_statistics
/// - `demographics.csv`: group, participants, trials, uncertain_trials, uncertain_rate, mean_age_days
/// - `difficulty.csv`: condition, difficulty_rank, trials, uncertain_share, correct_rate
/// - `report.json`: everything above plus the label split
///
/// Output bytes depend only on the report contents.
pub fn emit_distribution_report(
    report: &AnalysisReport,
    dir: impl AsRef<Path>,
) -> Result<(), AnalysisError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| AnalysisError::Io(format!("{}: {e}", dir.display())))?;

    let mut rows = vec![row(["name", "r", "n", "df", "p_value"])];
    for c in &report.correlations {
        rows.push(match &c.result {
            Some(r) => row([
                c.name.clone(),
                r.r.to_string(),
                r.n.to_string(),
                r.df.to_string(),
                r.p_value.to_string(),
            ]),
            None => row([c.name.as_str(), "", "", "", ""]),
        });
    }
    write_csv(&dir.join("correlations.csv"), &rows)?;

    let mut rows = vec![row([
        "cue",
        "subset",
        "rate",
        "count",
        "subset_trials",
        "in_published_statistics",
    ])];
    for cue in Cue::ALL {
        for s in Subset::ALL {
            rows.push(row([
                cue.name().to_string(),
                s.name().to_string(),
                report.cues.rate(cue, s).to_string(),
                report.cues.count(cue, s).to_string(),
                report.cues.subset_trials[s as usize].to_string(),
                cue.in_published_statistics().to_string(),
            ]));
        }
    }
    write_csv(&dir.join("cue_frequencies.csv"), &rows)?;

    let mut rows = vec![row([
        "group",
        "participants",
        "trials",
        "uncertain_trials",
        "uncertain_rate",
        "mean_age_days",
    ])];
    for g in &report.demographics.groups {
        rows.push(row([
            g.group.clone(),
            g.participants.to_string(),
            g.trials.to_string(),
            g.uncertain_trials.to_string(),
            g.uncertain_rate.to_string(),
            g.mean_age_days.to_string(),
        ]));
    }
    rows.push(row([
        "uncertain_trials_mean_age".to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        fmt_opt(report.demographics.mean_age_uncertain_trials),
    ]));
    rows.push(row([
        "other_trials_mean_age".to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        fmt_opt(report.demographics.mean_age_other_trials),
    ]));
    write_csv(&dir.join("demographics.csv"), &rows)?;

    let mut rows = vec![row([
        "condition",
        "difficulty_rank",
        "trials",
        "uncertain_share",
        "correct_rate",
    ])];
    for p in &report.difficulty {
        rows.push(row([
            p.condition
                .map(|c| c.as_str().to_string())
                .unwrap_or_else(|| "pooled".into()),
            p.difficulty_rank.to_string(),
            p.trials.to_string(),
            p.uncertain_share.to_string(),
            p.correct_rate.to_string(),
        ]));
    }
    write_csv(&dir.join("difficulty.csv"), &rows)?;

    let json =
        serde_json::to_string_pretty(report).map_err(|e| AnalysisError::Io(e.to_string()))?;
    fs::write(dir.join("report.json"), json)
        .map_err(|e| AnalysisError::Io(format!("{}: {e}", dir.display())))?;
    Ok(())
}
