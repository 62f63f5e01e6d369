use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};
use uncertainty_core::analysis::{
    analyze, emit_distribution_report, AnalysisConfig, DifficultyPooling,
};
use uncertainty_core::annotation::{
    parse_annotation_file, parse_participants_file, write_annotation_file, write_participants_file,
    UncertaintyLabel,
};
use uncertainty_core::features::{
    ablate_modalities, write_dataset, Modality, SynthConfig, SynthGenerator,
};
use uncertainty_core::model::{
    eval_by_age_group, evaluate, evaluate_labels, majority_baseline, run_seed, summarize,
    Checkpoint, ContrastiveConfig, EvalReport, ExperimentConfig, ModelKind, RunResult, Selection,
    TrainConfig,
};
use uncertainty_core::seed::rng_from;
use uncertainty_core::stimgen::{
    build_schedule, build_schedule_with, Condition, Schedule, StimulusConfig,
};
use uncertainty_service::SessionStore;

use crate::args::*;
use crate::data::{write_synth_manifest, DataSource, SplitName};
use crate::error::{from_model, CliError, Context};

const EVAL_BATCH: usize = 64;

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).failed("serialize")?;
    std::fs::write(path, text).failed(path.display())
}

fn print_json(value: &impl Serialize) -> Result<(), CliError> {
    println!(
        "{}",
        serde_json::to_string_pretty(value).failed("serialize")?
    );
    Ok(())
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).failed(format!("cannot create {}", path.display()))
}

pub fn stimgen(a: StimgenArgs) -> Result<(), CliError> {
    let condition = match a.condition {
        ConditionArg::EasyFirst => Condition::EasyFirst,
        ConditionArg::HardFirst => Condition::HardFirst,
        ConditionArg::Random => {
            if rng_from(a.seed).random_bool(0.5) {
                Condition::EasyFirst
            } else {
                Condition::HardFirst
            }
        }
    };
    let mut cfg = StimulusConfig::default();
    if let Some(ms) = a.display_ms {
        cfg.display_ms = ms;
    }
    let schedule = build_schedule_with(condition, a.seed, &cfg).failed("stimulus generation")?;
    let text = schedule.to_json().failed("serialize schedule")?;
    match a.out {
        Some(p) => {
            std::fs::write(&p, text).failed(p.display())?;
            eprintln!(
                "wrote {} ({condition}, {} trials)",
                p.display(),
                schedule.trials.len()
            );
        }
        None => println!("{text}"),
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let mut cfg = SynthConfig {
        trials: a.trials,
        noise_sigma: a.sigma,
        seed: a.seed,
        ..SynthConfig::default()
    };
    if let Some(p) = a.speech_prob {
        cfg.speech_prob = p;
    }
    if let Some(g) = a.uncertainty_gradient {
        cfg.uncertainty_gradient = g;
    }
    let g = SynthGenerator::new(cfg.clone()).invalid("synthetic configuration")?;
    create_dir(&a.out)?;
    let recipe = a.out.join("synth.manifest.json");
    write_synth_manifest(&recipe, &cfg)?;
    let ann = a.out.join("annotations.csv");
    write_annotation_file(&ann, &g.annotations()).failed(ann.display())?;
    let parts = a.out.join("participants.csv");
    write_participants_file(&parts, g.participants()).failed(parts.display())?;
    for c in [Condition::EasyFirst, Condition::HardFirst] {
        let s = build_schedule(c, cfg.seed).failed("stimulus generation")?;
        let p = a.out.join(format!("schedule.{}.json", c.as_str()));
        std::fs::write(&p, s.to_json().failed("serialize schedule")?).failed(p.display())?;
    }
    if a.materialize {
        let items = (0..g.len()).map(|i| {
            let d = g.draw(i);
            (g.bundle::<f32>(i), Some(d.participant_id), d.label, d.cues)
        });
        let m = write_dataset(&a.out, cfg.lengths, items).failed("write features")?;
        eprintln!("wrote {}", m.display());
    }
    eprintln!("wrote {} trials to {}", g.len(), a.out.display());
    Ok(())
}

pub fn analyze_cmd(a: AnalyzeArgs) -> Result<(), CliError> {
    let records = parse_annotation_file(&a.annotations).invalid(a.annotations.display())?;
    let participants =
        parse_participants_file(&a.participants).invalid(a.participants.display())?;
    let schedules: Vec<Schedule> = if a.schedule.is_empty() {
        [Condition::EasyFirst, Condition::HardFirst]
            .into_iter()
            .map(|c| build_schedule(c, a.seed).failed("stimulus generation"))
            .collect::<Result<_, _>>()?
    } else {
        a.schedule
            .iter()
            .map(|p| {
                let text = std::fs::read_to_string(p).invalid(p.display())?;
                Schedule::from_json(&text).invalid(p.display())
            })
            .collect::<Result<_, _>>()?
    };
    let cfg = AnalysisConfig {
        permutations: a.permutations,
        seed: a.seed,
        pooling: match a.pooling {
            PoolingArg::ByRank => DifficultyPooling::ByRank,
            PoolingArg::ByRankAndCondition => DifficultyPooling::ByRankAndCondition,
        },
    };
    let report = analyze(&records, &participants, &schedules, &cfg).invalid("analysis")?;
    if let Some(dir) = &a.out {
        emit_distribution_report(&report, dir).failed("write report")?;
        eprintln!("wrote report to {}", dir.display());
    }
    print_json(&json!({ "labels": report.labels, "correlations": report.correlations }))
}

fn data_source(d: &DataArgs, seed: u64) -> Result<DataSource, CliError> {
    match &d.data {
        Some(p) => DataSource::from_path(p),
        None => {
            let cfg = SynthConfig {
                trials: d.trials,
                noise_sigma: d.sigma,
                seed,
                ..SynthConfig::default()
            };
            cfg.validate().invalid("synthetic configuration")?;
            Ok(DataSource::Synthetic(cfg))
        }
    }
}

/// Experiment configuration from flags; `--seeds` and `--seed` fill the seed list.
pub fn experiment_config(
    m: &ModelArgs,
    seed: u64,
    seeds: usize,
) -> Result<ExperimentConfig, CliError> {
    if seeds == 0 {
        return Err(CliError::Validation("--seeds must be at least 1".into()));
    }
    let mut train = match m.train_preset {
        TrainPresetArg::Default => TrainConfig::default(),
        TrainPresetArg::Short => TrainConfig::preset_short(),
        TrainPresetArg::Long => TrainConfig::preset_long(),
    };
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(train.epochs, m.epochs);
    set!(train.batch_size, m.batch_size);
    set!(train.learning_rate, m.lr);
    set!(train.momentum, m.momentum);
    if m.grad_clip.is_some() {
        train.grad_clip = m.grad_clip;
    }
    if m.no_grad_clip {
        train.grad_clip = None;
    }
    train.class_weighted = m.class_weighted;
    train.weighted_sampling = m.weighted_sampling;
    if let Some(s) = m.selection {
        train.selection = match s {
            SelectionArg::BestDevLoss => Selection::BestDevLoss,
            SelectionArg::BestDevF1 => Selection::BestDevF1,
            SelectionArg::Last => Selection::Last,
        };
    }
    train.stop_at_dev_f1 = m.stop_at_dev_f1;
    train.seeds = (0..seeds as u64).map(|i| seed.wrapping_add(i)).collect();
    train
        .validate()
        .map_err(|e| from_model("training configuration", e))?;

    let mut cfg = ExperimentConfig {
        kind: match m.preset {
            KindArg::Mlp => ModelKind::Mlp,
            KindArg::Mult => ModelKind::Mult,
            KindArg::Ensemble => ModelKind::Ensemble,
        },
        ..ExperimentConfig::default()
    };
    set!(cfg.mult.layers, m.layers);
    set!(cfg.mult.heads, m.heads);
    set!(cfg.mult.model_dim, m.model_dim);
    set!(cfg.mult.dropout, m.dropout);
    set!(cfg.mlp.hidden, m.hidden);
    set!(cfg.mlp.dropout, m.dropout);
    cfg.mult
        .validate()
        .map_err(|e| from_model("model configuration", e))?;
    cfg.ensemble.backbone = uncertainty_core::model::MulTConfig {
        outputs: cfg.ensemble.backbone.outputs,
        ..cfg.mult.clone()
    };
    cfg.ensemble.stage1 = train.clone();
    cfg.ensemble.stage1.stop_at_dev_f1 = None;
    cfg.ensemble.stage2.seeds = train.seeds.clone();
    set!(cfg.ensemble.stage2.epochs, m.stage2_epochs);
    if m.contrastive {
        let mut c = ContrastiveConfig {
            conventional: m.conventional,
            per_modality: m.per_modality,
            ..ContrastiveConfig::default()
        };
        set!(c.pretrain_epochs, m.pretrain_epochs);
        set!(c.margin, m.margin);
        set!(c.alpha, m.alpha);
        c.validate()
            .map_err(|e| from_model("contrastive configuration", e))?;
        cfg.contrastive = Some(c);
    }
    cfg.train = train;
    Ok(cfg)
}

fn save_run(
    dir: &Path,
    run: &RunResult<f32>,
    pool_window: usize,
    normalizer: &uncertainty_core::features::Normalizer<f32>,
    meta: Value,
) -> Result<(), CliError> {
    let s = run.seed;
    run.history
        .write_csv(dir.join(format!("history_seed{s}.csv")))
        .map_err(|e| from_model("write history", e))?;
    if let Some(h) = &run.stage2_history {
        h.write_csv(dir.join(format!("history_stage2_seed{s}.csv")))
            .map_err(|e| from_model("write history", e))?;
    }
    let ckpt = Checkpoint {
        model: run.model.clone(),
        normalizer: Some(normalizer.clone()),
        pool_window,
        meta,
    };
    ckpt.save(dir.join(format!("model_seed{s}.ckpt")))
        .map_err(|e| CliError::Runtime(format!("save checkpoint: {e}")))
}

fn run_all(
    cfg: &ExperimentConfig,
    data: &uncertainty_core::model::PreparedData<f32>,
) -> Result<Vec<RunResult<f32>>, CliError> {
    let mut runs = Vec::new();
    for &s in &cfg.train.seeds {
        let started = std::time::Instant::now();
        let r = run_seed(cfg, data, s).map_err(|e| from_model(&format!("training seed {s}"), e))?;
        eprintln!(
            "seed {s}: {} epochs, best dev F1 {:.4}, test F1 {:.4}, test MAE {:.4} ({:.1}s)",
            r.history.epochs.len(),
            r.history.best_dev_f1(),
            r.test.weighted_f1,
            r.test.mae,
            started.elapsed().as_secs_f64()
        );
        runs.push(r);
    }
    Ok(runs)
}

pub fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let cfg = experiment_config(&a.model, a.seed, a.seeds)?;
    let source = data_source(&a.data, a.seed)?;
    let split_seed = a.data.split_seed.unwrap_or(a.seed);
    create_dir(&a.out)?;
    let data = source.prepare(a.data.pool_window, split_seed)?;
    eprintln!(
        "data: {} train, {} dev, {} test",
        data.train.len(),
        data.dev.len(),
        data.test.len()
    );
    let runs = run_all(&cfg, &data)?;
    for r in &runs {
        let meta = json!({
            "kind": cfg.kind,
            "seed": r.seed,
            "split_seed": split_seed,
            "source": source.to_meta(),
            "best_dev_f1": r.history.best_dev_f1(),
            "selected_epoch": r.history.selected_epoch,
            "experiment": cfg,
        });
        save_run(&a.out, r, data.pool_window, &data.normalizer, meta)?;
    }
    let summary = summarize(cfg.kind, &runs);
    let majority = majority_baseline(&data.train, &data.test)
        .map_err(|e| from_model("majority baseline", e))?;
    let out = json!({ "summary": summary, "majority": majority });
    write_json(&a.out.join("summary.json"), &out)?;
    print_json(&out)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint<f32>, CliError> {
    Checkpoint::<f32>::load(path).invalid(path.display())
}

fn eval_source(ckpt: &Checkpoint<f32>, data: Option<&Path>) -> Result<DataSource, CliError> {
    match data {
        Some(p) => DataSource::from_path(p),
        None => ckpt
            .meta
            .get("source")
            .and_then(DataSource::from_meta)
            .ok_or_else(|| {
                CliError::Validation(
                    "no --data given and the checkpoint records no data source".into(),
                )
            }),
    }
}

fn report(
    ckpt: &Checkpoint<f32>,
    samples: &[uncertainty_core::features::AlignedSample<f32>],
) -> Result<EvalReport, CliError> {
    if samples.is_empty() {
        return Err(CliError::Validation("selected split is empty".into()));
    }
    let scores = ckpt
        .model
        .scores(samples, EVAL_BATCH)
        .map_err(|e| from_model("inference", e))?;
    let truth: Vec<UncertaintyLabel> = samples.iter().map(|s| s.label).collect();
    evaluate(scores.view(), &truth).map_err(|e| from_model("evaluate", e))
}

pub fn eval_cmd(a: EvalArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let source = eval_source(&ckpt, a.data.as_deref())?;
    let split_seed = a
        .split_seed
        .or_else(|| ckpt.meta.get("split_seed").and_then(Value::as_u64))
        .unwrap_or(a.seed);
    let samples = source.split_for_inference(
        a.split,
        split_seed,
        ckpt.normalizer.as_ref(),
        ckpt.pool_window,
    )?;
    let overall = report(&ckpt, &samples)?;
    let mut out = json!({ "split": format!("{:?}", a.split).to_lowercase(), "report": overall });
    if a.by_age {
        let participants = source
            .participants(a.participants.as_deref())?
            .ok_or_else(|| {
                CliError::Validation("--by-age needs --participants for manifest data".into())
            })?;
        let groups = eval_by_age_group(&ckpt.model, &samples, &participants, EVAL_BATCH)
            .map_err(|e| from_model("age groups", e))?;
        let groups: serde_json::Map<String, Value> = groups
            .into_iter()
            .map(|(g, r)| {
                (
                    g.as_str().to_string(),
                    serde_json::to_value(r).expect("report serializes"),
                )
            })
            .collect();
        out["by_age"] = Value::Object(groups);
    }
    if let Some(p) = &a.out {
        write_json(p, &out)?;
    }
    print_json(&out)
}

fn parse_modalities(names: &[String]) -> Result<Vec<Modality>, CliError> {
    let mut out: Vec<Modality> = Vec::new();
    for n in names {
        let m: Modality = n.trim().parse().invalid("--modalities")?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

fn majority_of(
    train: &[UncertaintyLabel],
    test: &[UncertaintyLabel],
) -> Result<EvalReport, CliError> {
    let mut counts = [0usize; 3];
    for l in train {
        counts[l.class_index()] += 1;
    }
    let c = (0..3)
        .max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))
        .expect("three classes");
    let label = UncertaintyLabel::from_class_index(c).expect("valid class");
    evaluate_labels(&vec![label; test.len()], test).map_err(|e| from_model("majority baseline", e))
}

pub fn ablate_cmd(a: AblateArgs) -> Result<(), CliError> {
    let mods = parse_modalities(&a.modalities)?;
    let names: Vec<String> = mods.iter().map(|m| m.to_string()).collect();
    let out = match &a.checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let source = eval_source(&ckpt, a.data.data.as_deref())?;
            let split_seed = a
                .data
                .split_seed
                .or_else(|| ckpt.meta.get("split_seed").and_then(Value::as_u64))
                .unwrap_or(a.seed);
            let samples = source.split_for_inference(
                a.split,
                split_seed,
                ckpt.normalizer.as_ref(),
                ckpt.pool_window,
            )?;
            let full = report(&ckpt, &samples)?;
            let ablated = report(&ckpt, &ablate_modalities(&samples, &mods))?;
            let train =
                source.split_for_inference(SplitName::Train, split_seed, None, ckpt.pool_window)?;
            let train_labels: Vec<UncertaintyLabel> = train.iter().map(|s| s.label).collect();
            let test_labels: Vec<UncertaintyLabel> = samples.iter().map(|s| s.label).collect();
            json!({
                "ablated": names,
                "full": full,
                "report": ablated,
                "majority": majority_of(&train_labels, &test_labels)?,
            })
        }
        None => {
            let cfg = experiment_config(&a.model, a.seed, a.seeds)?;
            let source = data_source(&a.data, a.seed)?;
            let data = source
                .prepare(a.data.pool_window, a.data.split_seed.unwrap_or(a.seed))?
                .ablated(&mods);
            let runs = run_all(&cfg, &data)?;
            json!({
                "ablated": names,
                "summary": summarize(cfg.kind, &runs),
                "majority": majority_baseline(&data.train, &data.test).map_err(|e| from_model("majority baseline", e))?,
            })
        }
    };
    if let Some(p) = &a.out {
        write_json(p, &out)?;
    }
    print_json(&out)
}

pub fn serve_cmd(a: ServeArgs) -> Result<(), CliError> {
    if let Some(d) = &a.static_dir {
        if !d.is_dir() {
            return Err(CliError::Validation(format!(
                "static directory {} does not exist",
                d.display()
            )));
        }
    }
    let store = SessionStore::open(&a.sessions_dir, a.seed).invalid(a.sessions_dir.display())?;
    eprintln!(
        "{} sessions loaded from {}",
        store.len(),
        a.sessions_dir.display()
    );
    let rt = tokio::runtime::Runtime::new().failed("start runtime")?;
    eprintln!("listening on http://{}", a.addr);
    rt.block_on(uncertainty_service::serve(
        a.addr,
        Arc::new(store),
        a.static_dir,
    ))
    .failed(format!("serve on {}", a.addr))
}

pub fn export_cmd(a: ExportArgs) -> Result<(), CliError> {
    if !a.sessions_dir.is_dir() {
        return Err(CliError::Validation(format!(
            "sessions directory {} does not exist",
            a.sessions_dir.display()
        )));
    }
    let store = SessionStore::open(&a.sessions_dir, 0).invalid(a.sessions_dir.display())?;
    match &a.session {
        Some(id) => {
            let csv = store.export_csv(id).invalid("export")?;
            match &a.out {
                Some(p) => std::fs::write(p, csv).failed(p.display())?,
                None => print!("{csv}"),
            }
        }
        None => {
            let dir = a.out.as_ref().ok_or_else(|| {
                CliError::Validation("--out DIR is required when exporting every session".into())
            })?;
            create_dir(dir)?;
            for id in store.session_ids() {
                let p = dir.join(format!("{id}.csv"));
                std::fs::write(&p, store.export_csv(&id).failed("export")?).failed(p.display())?;
            }
            eprintln!("exported {} sessions to {}", store.len(), dir.display());
        }
    }
    Ok(())
}
