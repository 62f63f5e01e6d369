use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{align, AlignedSample, FeatureBundle, FeatureError, Modality, SequenceLengths};
use crate::annotation::{CueSet, UncertaintyLabel};
use crate::scalar::Scalar;

fn io_err(path: &Path, source: std::io::Error) -> FeatureError {
    FeatureError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_matrix<T: Scalar>(path: &Path, modality: Modality) -> Result<Array2<T>, FeatureError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let cols = modality.dim();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut n = 0;
        for (j, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| FeatureError::NonNumeric {
                path: path.display().to_string(),
                line: i + 1,
                column: j + 1,
                cell: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(FeatureError::NonFinite(format!(
                    "{}:{}",
                    path.display(),
                    i + 1
                )));
            }
            data.push(T::from_f64_lossy(v));
            n += 1;
        }
        if n != cols {
            return Err(FeatureError::WrongColumns {
                path: path.display().to_string(),
                modality,
                expected: cols,
                actual: n,
                line: i + 1,
            });
        }
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("row-major data matches shape"))
}

fn write_matrix<T: Scalar>(path: &Path, m: &Array2<T>) -> Result<(), FeatureError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Loads one trial's streams. A missing text file means the trial has no speech.
pub fn load_feature_bundle<T: Scalar>(
    trial_id: &str,
    video_path: impl AsRef<Path>,
    audio_path: impl AsRef<Path>,
    text_path: Option<&Path>,
) -> Result<FeatureBundle<T>, FeatureError> {
    let (video_path, audio_path) = (video_path.as_ref(), audio_path.as_ref());
    for (m, p) in [(Modality::Video, video_path), (Modality::Audio, audio_path)] {
        if !p.exists() {
            return Err(FeatureError::Missing {
                modality: m,
                path: p.display().to_string(),
            });
        }
    }
    let video = read_matrix(video_path, Modality::Video)?;
    let audio = read_matrix(audio_path, Modality::Audio)?;
    let text = match text_path {
        Some(p) if p.exists() => read_matrix(p, Modality::Text)?,
        _ => Array2::zeros((0, Modality::Text.dim())),
    };
    let bundle = FeatureBundle {
        trial_id: trial_id.to_string(),
        video,
        audio,
        text,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn bundle_paths(dir: &Path, trial_id: &str) -> [PathBuf; 3] {
    [
        dir.join(format!("{trial_id}.video.csv")),
        dir.join(format!("{trial_id}.audio.csv")),
        dir.join(format!("{trial_id}.text.csv")),
    ]
}

/// Writes `{trial_id}.video.csv`, `.audio.csv` and, when tokens exist, `.text.csv`.
pub fn write_feature_bundle<T: Scalar>(
    dir: impl AsRef<Path>,
    bundle: &FeatureBundle<T>,
) -> Result<[PathBuf; 3], FeatureError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let paths = bundle_paths(dir, &bundle.trial_id);
    write_matrix(&paths[0], &bundle.video)?;
    write_matrix(&paths[1], &bundle.audio)?;
    if bundle.text.nrows() > 0 {
        write_matrix(&paths[2], &bundle.text)?;
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub trial_id: String,
    #[serde(default)]
    pub participant_id: Option<String>,
    /// Paths are relative to the manifest's directory unless absolute.
    pub video: String,
    pub audio: String,
    #[serde(default)]
    pub text: Option<String>,
    pub label: UncertaintyLabel,
    #[serde(default)]
    pub cues: CueSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub lengths: SequenceLengths,
    pub trials: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&s)
            .map_err(|e| FeatureError::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let path = path.as_ref();
        let s = serde_json::to_string_pretty(self)
            .map_err(|e| FeatureError::Manifest(e.to_string()))?;
        fs::write(path, s).map_err(|e| io_err(path, e))
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads and aligns every trial listed in a manifest.
pub fn load_dataset<T: Scalar>(
    manifest_path: impl AsRef<Path>,
) -> Result<(DatasetManifest, Vec<AlignedSample<T>>), FeatureError> {
    let manifest_path = manifest_path.as_ref();
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(manifest.trials.len());
    for e in &manifest.trials {
        let text = e.text.as_deref().map(|t| resolve(base, t));
        let bundle = load_feature_bundle(
            &e.trial_id,
            resolve(base, &e.video),
            resolve(base, &e.audio),
            text.as_deref(),
        )?;
        let mut sample = align(&bundle, &manifest.lengths, e.label, e.cues);
        sample.participant_id = e.participant_id.clone();
        out.push(sample);
    }
    Ok((manifest, out))
}

/// Writes feature files for `bundles` under `dir/features` plus `dir/manifest.json`.
pub fn write_dataset<T: Scalar>(
    dir: impl AsRef<Path>,
    lengths: SequenceLengths,
    items: impl IntoIterator<Item = (FeatureBundle<T>, Option<String>, UncertaintyLabel, CueSet)>,
) -> Result<PathBuf, FeatureError> {
    let dir = dir.as_ref();
    let feat_dir = dir.join("features");
    let mut trials = Vec::new();
    for (bundle, participant_id, label, cues) in items {
        write_feature_bundle(&feat_dir, &bundle)?;
        let rel = |suffix: &str| format!("features/{}.{suffix}.csv", bundle.trial_id);
        trials.push(ManifestEntry {
            trial_id: bundle.trial_id.clone(),
            participant_id,
            video: rel("video"),
            audio: rel("audio"),
            text: (bundle.text.nrows() > 0).then(|| rel("text")),
            label,
            cues,
        });
    }
    let manifest_path = dir.join("manifest.json");
    DatasetManifest { lengths, trials }.write(&manifest_path)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{AUDIO_DIM, TEXT_DIM, VIDEO_DIM};
    use rand::Rng;

    fn random_bundle(seed: u64, text_rows: usize) -> FeatureBundle<f64> {
        let mut rng = crate::seed::rng_from(seed);
        let mut m =
            |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.random_range(-3.0..3.0));
        FeatureBundle {
            trial_id: format!("trial{seed}"),
            video: m(7, VIDEO_DIM),
            audio: m(3, AUDIO_DIM),
            text: m(text_rows, TEXT_DIM),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = random_bundle(1, 2);
        let [v, a, t] = write_feature_bundle(dir.path(), &b).unwrap();
        let back: FeatureBundle<f64> = load_feature_bundle(&b.trial_id, &v, &a, Some(&t)).unwrap();
        for m in Modality::ALL {
            let diff = (back.stream(m) - b.stream(m)).mapv(f64::abs);
            assert!(diff.iter().all(|&d| d <= 1e-9));
        }
    }

    #[test]
    fn absent_text_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let b = random_bundle(2, 0);
        let [v, a, t] = write_feature_bundle(dir.path(), &b).unwrap();
        assert!(!t.exists());
        let back: FeatureBundle<f32> = load_feature_bundle(&b.trial_id, &v, &a, Some(&t)).unwrap();
        assert_eq!(back.text.dim(), (0, TEXT_DIM));
    }

    #[test]
    fn wrong_column_count_reports_expected() {
        let dir = tempfile::tempdir().unwrap();
        let b = random_bundle(3, 0);
        let [v, a, _] = write_feature_bundle(dir.path(), &b).unwrap();
        let short = vec!["0.5"; VIDEO_DIM - 1].join(",");
        fs::write(&v, format!("{short}\n")).unwrap();
        let err = load_feature_bundle::<f64>("x", &v, &a, None).unwrap_err();
        assert!(err.to_string().contains("expected 710"), "{err}");
        assert!(matches!(
            err,
            FeatureError::WrongColumns { actual: 709, .. }
        ));
    }

    #[test]
    fn non_numeric_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let b = random_bundle(4, 0);
        let [v, a, _] = write_feature_bundle(dir.path(), &b).unwrap();
        let mut row = vec!["0"; AUDIO_DIM];
        row[5] = "abc";
        fs::write(&a, row.join(",")).unwrap();
        assert!(matches!(
            load_feature_bundle::<f64>("x", &v, &a, None),
            Err(FeatureError::NonNumeric { column: 6, .. })
        ));
        assert!(matches!(
            load_feature_bundle::<f64>("x", dir.path().join("nope.csv"), &a, None),
            Err(FeatureError::Missing {
                modality: Modality::Video,
                ..
            })
        ));
    }

    #[test]
    fn manifest_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let lengths = SequenceLengths {
            video: 10,
            audio: 4,
            text: 4,
        };
        let items = (0..3).map(|i| {
            (
                random_bundle(10 + i, i as usize),
                Some(format!("p{i}")),
                UncertaintyLabel::ALL[i as usize],
                CueSet::default(),
            )
        });
        let manifest = write_dataset(dir.path(), lengths, items).unwrap();
        let (m, samples) = load_dataset::<f64>(&manifest).unwrap();
        assert_eq!(m.trials.len(), 3);
        assert_eq!(samples[2].label, UncertaintyLabel::Uncertain);
        assert_eq!(samples[1].participant_id.as_deref(), Some("p1"));
        assert_eq!(samples[0].real_rows(Modality::Text), 0);
        assert_eq!(samples[2].real_rows(Modality::Text), 2);
        assert_eq!(samples[0].video.dim(), (10, VIDEO_DIM));
    }
}
