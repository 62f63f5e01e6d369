//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails. Positional arguments filter criteria by name.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;
use uncertainty_core::analysis::{
    cue_frequencies, difficulty_correlation, pearson_r, uncertainty_by_difficulty,
    DifficultyPooling, Subset, TrialIndex,
};
use uncertainty_core::annotation::{
    label_distribution, parse_annotation_file, Cue, UncertaintyLabel,
};
use uncertainty_core::features::{Modality, SynthConfig, SynthGenerator};
use uncertainty_core::model::{
    contrastive_loss, evaluate, majority_baseline, prepare_synthetic, run_seed, sample_weights,
    weighted_sampler, ContrastiveConfig, EnsembleConfig, ExperimentConfig, ModelKind, MulTConfig,
    PreparedData, Tape, TrainConfig,
};
use uncertainty_core::seed::rng_from;
use uncertainty_core::stimgen::{build_schedule, Condition, DotArray, Side, TrialSpec};
use uncertainty_service::{router, SessionStore};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < budget, || {
        format!(
            "took {:.1} s, budget {:.0} s",
            t.as_secs_f64(),
            budget.as_secs_f64()
        )
    })
}

// ---------------------------------------------------------------- oracles

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Clone, Copy)]
struct Margin {
    margin: f64,
    alpha: f64,
    conventional: bool,
}

/// Pair-by-pair loss with cosine similarity recomputed from raw rows.
fn oracle_contrastive(
    z1: &Array2<f64>,
    z2: &Array2<f64>,
    l1: &[usize],
    l2: &[usize],
    p: Margin,
) -> f64 {
    let mut total = 0.0;
    for i in 0..z1.nrows() {
        for j in 0..z2.nrows() {
            let (mut dot, mut a, mut b) = (0.0, 0.0, 0.0);
            for k in 0..z1.ncols() {
                dot += z1[[i, k]] * z2[[j, k]];
                a += z1[[i, k]] * z1[[i, k]];
                b += z2[[j, k]] * z2[[j, k]];
            }
            let s = dot / (a.sqrt() * b.sqrt());
            let same = l1[i] == l2[j];
            let w = if same { p.alpha.exp() } else { 1.0 };
            let term = if !p.conventional {
                f64::max(p.margin - s, 0.0).powi(2)
            } else if same {
                (1.0 - s).powi(2)
            } else {
                f64::max(s - p.margin, 0.0).powi(2)
            };
            total += w * term;
        }
    }
    total / (z1.nrows() * z2.nrows()) as f64
}

fn oracle_weighted_ce(logits: &Array2<f64>, targets: &[usize], w: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        num += w[t] * (lse - row[t]);
        den += w[t];
    }
    num / den
}

struct Batch {
    z1: Array2<f64>,
    z2: Array2<f64>,
    l1: Vec<usize>,
    l2: Vec<usize>,
    p: Margin,
}

fn random_batch(rng: &mut ChaCha8Rng, max_n: usize, max_d: usize) -> Batch {
    let (n1, n2, d) = (
        rng.random_range(1..=max_n),
        rng.random_range(1..=max_n),
        rng.random_range(2..=max_d),
    );
    let z1 = Array2::from_shape_simple_fn((n1, d), || rng.random_range(-1.0..1.0));
    let z2 = Array2::from_shape_simple_fn((n2, d), || rng.random_range(-1.0..1.0));
    let l1 = (0..n1).map(|_| rng.random_range(0..3)).collect();
    let l2 = (0..n2).map(|_| rng.random_range(0..3)).collect();
    let p = Margin {
        margin: rng.random_range(0.0..1.0),
        alpha: rng.random_range(0.0..2.0),
        conventional: rng.random_bool(0.5),
    };
    Batch { z1, z2, l1, l2, p }
}

fn config_of(p: Margin) -> ContrastiveConfig {
    ContrastiveConfig {
        margin: p.margin,
        alpha: p.alpha,
        conventional: p.conventional,
        ..ContrastiveConfig::default()
    }
}

/// Largest relative error between `analytic` and central differences of `f` around `x`.
fn fd_check(x: &Array2<f64>, analytic: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> f64 {
    const EPS: f64 = 1e-4;
    let mut worst: f64 = 0.0;
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let mut hi = x.clone();
        hi[[r, c]] += EPS;
        let mut lo = x.clone();
        lo[[r, c]] -= EPS;
        let numeric = (f(&hi) - f(&lo)) / (2.0 * EPS);
        let a = analytic[[r, c]];
        let scale = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}

// ---------------------------------------------------------------- criteria

fn contrastive_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let b = random_batch(&mut rng, 8, 16);
        let got = contrastive_loss(b.z1.view(), b.z2.view(), &b.l1, &b.l2, &config_of(b.p))
            .map_err(|e| e.to_string())?;
        worst = worst.max((got - oracle_contrastive(&b.z1, &b.z2, &b.l1, &b.l2, b.p)).abs());
    }
    ensure(worst <= 1e-6, || format!("max |diff| {worst:.3e} > 1e-6"))?;
    within_budget(start, Duration::from_secs(5))?;
    Ok(format!("50 batches, max |diff| {worst:.2e}"))
}

fn weighted_sampling() -> Outcome {
    let start = Instant::now();
    let counts = [81usize, 9, 100];
    let labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| vec![c; n])
        .collect();
    let weights = sample_weights(&counts).map_err(|e| e.to_string())?;
    let draws = weighted_sampler(&labels, &weights, 100_000, 3).map_err(|e| e.to_string())?;
    let mut hits = [0usize; 3];
    for i in draws {
        hits[labels[i]] += 1;
    }
    let roots: Vec<f64> = counts.iter().map(|&n| (n as f64).sqrt()).collect();
    let total: f64 = roots.iter().sum();
    let mut shares = Vec::new();
    for c in 0..3 {
        let share = hits[c] as f64 / 100_000.0;
        let expected = roots[c] / total;
        ensure((share - expected).abs() <= 0.01, || {
            format!("class {c}: share {share:.4}, expected {expected:.4}")
        })?;
        shares.push(format!("{share:.4}/{expected:.4}"));
    }
    within_budget(start, Duration::from_secs(5))?;
    Ok(format!("observed/expected shares {}", shares.join(", ")))
}

fn gradient_checks() -> Outcome {
    let mut rng = rng_from(2);
    let (mut worst_cl, mut worst_ce): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let b = random_batch(&mut rng, 6, 8);
        let cfg = config_of(b.p);
        let mut tape = Tape::<f64>::new();
        let v1 = tape.variable(b.z1.clone());
        let v2 = tape.variable(b.z2.clone());
        let loss = tape
            .contrastive(v1, v2, &b.l1, &b.l2, cfg.params())
            .map_err(|e| e.to_string())?;
        let grads = tape.backward(loss);
        let g1 = grads.get(v1).ok_or("no gradient for z1")?;
        let g2 = grads.get(v2).ok_or("no gradient for z2")?;
        worst_cl = worst_cl.max(fd_check(&b.z1, g1, |z| {
            oracle_contrastive(z, &b.z2, &b.l1, &b.l2, b.p)
        }));
        worst_cl = worst_cl.max(fd_check(&b.z2, g2, |z| {
            oracle_contrastive(&b.z1, z, &b.l1, &b.l2, b.p)
        }));
    }
    for _ in 0..20 {
        let n = rng.random_range(1..=8);
        let logits = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-3.0..3.0));
        let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..3.0)).collect();
        let mut tape = Tape::<f64>::new();
        let v = tape.variable(logits.clone());
        let loss = tape
            .softmax_cross_entropy(v, &targets, Some(&w))
            .map_err(|e| e.to_string())?;
        let grads = tape.backward(loss);
        let g = grads.get(v).ok_or("no gradient for logits")?;
        worst_ce = worst_ce.max(fd_check(&logits, g, |x| {
            oracle_weighted_ce(x, &targets, &w)
        }));
    }
    ensure(worst_cl <= 1e-3, || {
        format!("contrastive relative error {worst_cl:.3e}")
    })?;
    ensure(worst_ce <= 1e-3, || {
        format!("cross-entropy relative error {worst_ce:.3e}")
    })?;
    Ok(format!(
        "20+20 probes, max relative error contrastive {worst_cl:.2e}, cross-entropy {worst_ce:.2e}"
    ))
}

fn dot_area(a: &DotArray) -> f64 {
    a.dots.iter().map(|d| PI * d.radius * d.radius).sum()
}

fn check_array(a: &DotArray) -> Result<(), String> {
    for (i, p) in a.dots.iter().enumerate() {
        ensure(
            p.x - p.radius >= 0.0
                && p.y - p.radius >= 0.0
                && p.x + p.radius <= a.canvas_width
                && p.y + p.radius <= a.canvas_height,
            || format!("dot {i} leaves the canvas"),
        )?;
        for q in &a.dots[i + 1..] {
            let dist = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
            ensure(dist >= p.radius + q.radius, || {
                "overlapping dots".to_string()
            })?;
        }
    }
    ensure((dot_area(a) - a.cumulative_area).abs() <= 1e-6, || {
        "cumulative area mismatch".into()
    })
}

fn check_trial(t: &TrialSpec) -> Result<(), String> {
    const BASE_RADIUS: f64 = 12.0;
    const INCONGRUENT: f64 = 0.8;
    let (greater, lesser) = match t.greater_side {
        Side::Left => (&t.left_array, &t.right_array),
        Side::Right => (&t.right_array, &t.left_array),
    };
    let (big, small) = (
        t.pair.left_count.max(t.pair.right_count),
        t.pair.left_count.min(t.pair.right_count),
    );
    ensure(
        greater.dots.len() == big as usize && lesser.dots.len() == small as usize,
        || format!("{}: counts do not match the pair", t.trial_id),
    )?;
    check_array(greater).map_err(|e| format!("{}: {e}", t.trial_id))?;
    check_array(lesser).map_err(|e| format!("{}: {e}", t.trial_id))?;
    let (ga, la) = (dot_area(greater), dot_area(lesser));
    ensure((ga > la) == t.area_congruent, || {
        format!("{}: area-congruency sign", t.trial_id)
    })?;
    let la_target = small as f64 * PI * BASE_RADIUS * BASE_RADIUS;
    let ga_target = if t.area_congruent {
        big as f64 * PI * BASE_RADIUS * BASE_RADIUS
    } else {
        INCONGRUENT * la_target
    };
    ensure(
        (la - la_target).abs() <= 1e-6 && (ga - ga_target).abs() <= 1e-6,
        || {
            format!(
                "{}: area {ga:.9}/{la:.9} vs targets {ga_target:.9}/{la_target:.9}",
                t.trial_id
            )
        },
    )
}

fn stimulus_invariants() -> Outcome {
    let start = Instant::now();
    let pairs = [(10u32, 9u32), (8, 7), (14, 12), (10, 8), (9, 6), (10, 5)];
    let mut schedules = 0;
    for seed in 0..100u64 {
        let easy = build_schedule(Condition::EasyFirst, seed).map_err(|e| e.to_string())?;
        let hard = build_schedule(Condition::HardFirst, seed).map_err(|e| e.to_string())?;
        for s in [&easy, &hard] {
            schedules += 1;
            ensure(s.trials.len() == 30, || {
                format!("seed {seed}: {} trials", s.trials.len())
            })?;
            let congruent = s.trials.iter().filter(|t| t.area_congruent).count();
            ensure(congruent == 15, || {
                format!("seed {seed}: {congruent} congruent trials")
            })?;
            let mut reps: BTreeMap<(u32, u32), usize> = BTreeMap::new();
            for t in &s.trials {
                let key = (
                    t.pair.left_count.max(t.pair.right_count),
                    t.pair.left_count.min(t.pair.right_count),
                );
                *reps.entry(key).or_default() += 1;
                check_trial(t).map_err(|e| format!("seed {seed} {:?}: {e}", s.condition))?;
            }
            ensure(
                reps.len() == 6 && pairs.iter().all(|p| reps.get(p) == Some(&5)),
                || format!("seed {seed}: pair repetitions {reps:?}"),
            )?;
        }
        let ratio = |t: &TrialSpec| {
            t.pair.left_count.max(t.pair.right_count) as f64
                / t.pair.left_count.min(t.pair.right_count) as f64
        };
        ensure(
            easy.trials.windows(2).all(|w| ratio(&w[0]) >= ratio(&w[1])),
            || format!("seed {seed}: Easy-First ratios are not non-increasing"),
        )?;
        let reversed: Vec<TrialSpec> = easy.trials.iter().rev().cloned().collect();
        ensure(hard.trials == reversed, || {
            format!("seed {seed}: Hard-First is not reversed Easy-First")
        })?;
    }
    within_budget(start, Duration::from_secs(30))?;
    Ok(format!(
        "{schedules} schedules, {:.2} s",
        start.elapsed().as_secs_f64()
    ))
}

fn planted_gradient(gradient: f64) -> Result<(f64, f64), String> {
    let cfg = SynthConfig {
        trials: 30_000,
        noise_sigma: 0.0,
        uncertainty_gradient: gradient,
        seed: 5,
        ..SynthConfig::default()
    };
    let (unclear, uncertain) = (cfg.label_prior[1], cfg.label_prior[2]);
    let generator = SynthGenerator::new(cfg).map_err(|e| e.to_string())?;
    let schedule = generator.schedule().map_err(|e| e.to_string())?;
    let index = TrialIndex::from_schedules([&schedule]).map_err(|e| e.to_string())?;
    let points = uncertainty_by_difficulty(
        &generator.annotations(),
        &index,
        generator.participants(),
        DifficultyPooling::ByRank,
    )
    .map_err(|e| e.to_string())?;
    ensure(points.len() == 30, || {
        format!("{} difficulty points", points.len())
    })?;
    let observed = difficulty_correlation(&points, 200, 0)
        .map_err(|e| e.to_string())?
        .r;
    let ranks: Vec<f64> = (1..=30).map(f64::from).collect();
    let expected: Vec<f64> = ranks
        .iter()
        .map(|k| (uncertain + gradient * (k - 15.5) / 29.0).clamp(0.0, 1.0 - unclear))
        .collect();
    Ok((observed, oracle_pearson(&ranks, &expected)))
}

fn analysis_fixtures() -> Outcome {
    let fixtures: [(&[f64], &[f64], f64); 3] = [
        (
            &[1.0, 2.0, 3.0, 4.0, 5.0],
            &[2.0, 4.0, 5.0, 4.0, 5.0],
            6.0 / 60f64.sqrt(),
        ),
        (&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], -1.0),
        (&[0.0, 1.0, 0.0, 1.0], &[1.0, 1.0, 0.0, 0.0], 0.0),
    ];
    for (x, y, r) in fixtures {
        let got = pearson_r(x, y).map_err(|e| e.to_string())?;
        ensure((got - r).abs() <= 1e-9, || {
            format!("pearson {got} vs hand-computed {r}")
        })?;
    }
    let mut planted = Vec::new();
    for g in [0.25, -0.25] {
        let (observed, analytic) = planted_gradient(g)?;
        ensure(
            (observed - analytic).abs() <= 0.05 && observed.abs() > 0.9,
            || format!("gradient {g}: r {observed:.4}, analytic {analytic:.4}"),
        )?;
        planted.push(format!("{g:+}: r {observed:.4} vs {analytic:.4}"));
    }
    Ok(format!(
        "3 fixed vectors exact; planted {}",
        planted.join(", ")
    ))
}

fn calibration_round_trip() -> Outcome {
    let table4 = [
        (Cue::Delay, 0.03, 0.17),
        (Cue::EyebrowRaise, 0.05, 0.17),
        (Cue::EyebrowScrunch, 0.06, 0.22),
        (Cue::FilledPause, 0.03, 0.06),
        (Cue::FunnyFace, 0.02, 0.07),
        (Cue::HandOnFace, 0.17, 0.19),
        (Cue::LookToAdult, 0.04, 0.10),
        (Cue::LookAway, 0.03, 0.05),
        (Cue::FrustratedNoise, 0.01, 0.02),
        (Cue::ShoulderMovement, 0.01, 0.02),
        (Cue::Smile, 0.12, 0.17),
        (Cue::VerbalCues, 0.01, 0.02),
    ];
    let generator = SynthGenerator::new(SynthConfig {
        trials: 10_000,
        seed: 11,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let records = generator.annotations();
    let schedule = generator.schedule().map_err(|e| e.to_string())?;
    let index = TrialIndex::from_schedules([&schedule]).map_err(|e| e.to_string())?;
    let table =
        cue_frequencies(&records, generator.participants(), &index).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (cue, all, uncertain) in table4 {
        let (a, u) = (
            table.rate(cue, Subset::All),
            table.rate(cue, Subset::Uncertain),
        );
        ensure(
            (a - all).abs() <= 0.03 && (u - uncertain).abs() <= 0.03,
            || format!("{cue:?}: all {a:.3} vs {all}, uncertain {u:.3} vs {uncertain}"),
        )?;
        worst = worst.max((a - all).abs()).max((u - uncertain).abs());
    }
    let d = label_distribution(&records).map_err(|e| e.to_string())?;
    for (got, want) in [
        (d.uncertain, 0.138),
        (d.unclear, 0.053),
        (d.not_uncertain, 0.809),
    ] {
        ensure((got - want).abs() <= 0.02, || {
            format!("label share {got:.3} vs {want}")
        })?;
    }
    Ok(format!(
        "12 cues, max rate error {worst:.3}; labels {:.3}/{:.3}/{:.3}",
        d.uncertain, d.unclear, d.not_uncertain
    ))
}

fn synthetic_data() -> Result<PreparedData<f32>, String> {
    let generator = SynthGenerator::new(SynthConfig {
        trials: 2_000,
        noise_sigma: 0.25,
        seed: 0,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    prepare_synthetic(&generator, 30, 0).map_err(|e| e.to_string())
}

fn sgd(epochs: usize, seeds: Vec<u64>) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        momentum: 0.9,
        epochs,
        seeds,
        ..TrainConfig::default()
    }
}

fn compact_config(kind: ModelKind, seeds: Vec<u64>) -> ExperimentConfig {
    let mult = MulTConfig {
        model_dim: 20,
        layers: 2,
        ..MulTConfig::default()
    };
    let train = sgd(15, seeds.clone());
    let mut ensemble = EnsembleConfig {
        backbone: MulTConfig {
            outputs: EnsembleConfig::default().backbone.outputs,
            ..mult.clone()
        },
        stage1: train.clone(),
        ..EnsembleConfig::default()
    };
    ensemble.stage2.seeds = seeds;
    ExperimentConfig {
        kind,
        mult,
        ensemble,
        train,
        ..ExperimentConfig::default()
    }
}

fn learnability(data: &PreparedData<f32>) -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        train: TrainConfig {
            stop_at_dev_f1: Some(0.75),
            ..sgd(100, vec![0])
        },
        ..ExperimentConfig::default()
    };
    let run = run_seed(&cfg, data, 0).map_err(|e| e.to_string())?;
    let reached = run
        .history
        .epochs
        .iter()
        .find(|e| e.dev_f1 >= 0.75)
        .map(|e| e.epoch);
    let elapsed = start.elapsed();
    let epoch = reached.ok_or_else(|| {
        format!(
            "best dev F1 {:.4} after 100 epochs",
            run.history.best_dev_f1()
        )
    })?;
    within_budget(start, Duration::from_secs(20 * 60))?;

    let seeds = vec![0, 1, 2];
    let means = |kind: ModelKind| -> Result<(f64, f64), String> {
        let cfg = compact_config(kind, seeds.clone());
        let (mut f1, mut mae) = (0.0, 0.0);
        for &s in &seeds {
            let r = run_seed(&cfg, data, s).map_err(|e| e.to_string())?;
            f1 += r.test.weighted_f1 / seeds.len() as f64;
            mae += r.test.mae / seeds.len() as f64;
        }
        Ok((f1, mae))
    };
    let (mf1, mmae) = means(ModelKind::Mult)?;
    let (ef1, emae) = means(ModelKind::Ensemble)?;
    let detail = format!(
        "dev F1 >= 0.75 at epoch {epoch} in {:.0} s; 3-seed test F1 ensemble {ef1:.4} vs MulT {mf1:.4}, MAE {emae:.4} vs {mmae:.4}",
        elapsed.as_secs_f64()
    );
    ensure(ef1 >= mf1 - 0.02 && emae <= mmae + 0.01, || detail.clone())?;
    Ok(detail)
}

/// Predicted, truth, weighted F1, MAE, R².
type MetricCase = (
    &'static [UncertaintyLabel],
    &'static [UncertaintyLabel],
    f64,
    f64,
    Option<f64>,
);

fn metric_cases() -> Outcome {
    use UncertaintyLabel::{NotUncertain as N, Uncertain as U, Unclear as C};
    let cases: [MetricCase; 5] = [
        (&[N, C, U, N], &[N, C, U, N], 1.0, 0.0, Some(1.0)),
        (
            &[N, N, N, N],
            &[N, N, U, C],
            1.0 / 3.0,
            0.375,
            Some(-9.0 / 11.0),
        ),
        (&[U, N, N, N], &[U, U, N, N], 11.0 / 15.0, 0.25, Some(0.0)),
        (&[N, U, N], &[N, N, N], 0.8, 1.0 / 3.0, None),
        (
            &[C, C, N, U, U],
            &[C, U, N, C, U],
            0.6,
            0.2,
            Some(2.0 / 7.0),
        ),
    ];
    for (i, (pred, truth, f1, mae, r2)) in cases.into_iter().enumerate() {
        let mut scores = Array2::<f64>::zeros((pred.len(), 3));
        for (row, p) in pred.iter().enumerate() {
            scores[[row, p.class_index()]] = 1.0;
        }
        let rep = evaluate(scores.view(), truth).map_err(|e| e.to_string())?;
        let r2_ok = match (rep.r2, r2) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
            (None, None) => true,
            _ => false,
        };
        ensure(
            (rep.weighted_f1 - f1).abs() <= 1e-12 && (rep.mae - mae).abs() <= 1e-12 && r2_ok,
            || {
                format!(
                    "case {i}: F1 {} MAE {} R2 {:?}, expected {f1} {mae} {r2:?}",
                    rep.weighted_f1, rep.mae, rep.r2
                )
            },
        )?;
    }
    Ok("5 cases including R2 = -9/11 and undefined R2".into())
}

fn ablation(data: &PreparedData<f32>) -> Outcome {
    let masked = data.ablated(&Modality::ALL);
    let majority = majority_baseline(&masked.train, &masked.test)
        .map_err(|e| e.to_string())?
        .weighted_f1;
    let run = run_seed(&compact_config(ModelKind::Mult, vec![0]), &masked, 0)
        .map_err(|e| e.to_string())?;
    let f1 = run.test.weighted_f1;
    let detail = format!("test F1 {f1:.4}, majority {majority:.4}");
    ensure((f1 - majority).abs() <= 0.05, || detail.clone())?;
    Ok(detail)
}

async fn call(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> Result<(StatusCode, String), String> {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .map_err(|e| e.to_string())?;
    let resp = app.clone().oneshot(req).await.map_err(|e| e.to_string())?;
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .map_err(|e| e.to_string())?
        .to_bytes();
    Ok((status, String::from_utf8_lossy(&bytes).into_owned()))
}

struct ClientTrial {
    id: String,
    more_dots: &'static str,
}

/// Reads the UI schedule as a browser would: trial ids and dot arrays only.
fn client_trials(ui: &Value) -> Result<Vec<ClientTrial>, String> {
    let trials = ui["trials"].as_array().ok_or("schedule without trials")?;
    trials
        .iter()
        .map(|t| {
            let count = |side: &str| {
                t[side]["dots"]
                    .as_array()
                    .map(Vec::len)
                    .ok_or("trial without dots")
            };
            let (l, r) = (count("left_array")?, count("right_array")?);
            Ok(ClientTrial {
                id: t["trial_id"]
                    .as_str()
                    .ok_or("trial without id")?
                    .to_string(),
                more_dots: if l > r { "left" } else { "right" },
            })
        })
        .collect()
}

async fn simulate_sessions(
    app: &axum::Router,
    sessions: usize,
) -> Result<(Vec<(String, usize)>, usize, usize), String> {
    let mut rng = rng_from(2025);
    let mut created = Vec::new();
    let (mut bad_accepted, mut misjudged) = (0, 0);
    for i in 0..sessions {
        let req = json!({"participant_id": format!("p{i:04}"), "age_days": 1500 + i % 1000});
        let (status, body) = call(app, "POST", "/sessions", Some(req)).await?;
        ensure(status == StatusCode::CREATED, || {
            format!("create returned {status}: {body}")
        })?;
        let id = serde_json::from_str::<Value>(&body).map_err(|e| e.to_string())?["session_id"]
            .as_str()
            .ok_or("no session id")?
            .to_string();
        let (status, body) = call(app, "GET", &format!("/sessions/{id}/schedule"), None).await?;
        ensure(
            status == StatusCode::OK && !body.contains("greater_side"),
            || "bad UI schedule".into(),
        )?;
        let trials = client_trials(&serde_json::from_str(&body).map_err(|e| e.to_string())?)?;
        let uri = format!("/sessions/{id}/responses");
        let answered = if rng.random_bool(0.8) {
            30
        } else {
            rng.random_range(0..30)
        };
        for k in 0..answered {
            let mut invalid = Vec::new();
            if k > 0 && rng.random_bool(0.1) {
                invalid.push(trials[k - 1].id.clone());
            }
            if k + 1 < trials.len() && rng.random_bool(0.1) {
                invalid.push(trials[rng.random_range(k + 1..trials.len())].id.clone());
            }
            for bad in invalid {
                let r = json!({"trial_id": bad, "chosen_side": "left", "latency_ms": 1.0});
                let (status, _) = call(app, "POST", &uri, Some(r)).await?;
                bad_accepted += usize::from(status.is_success());
            }
            let t = &trials[k];
            let side = if rng.random_bool(0.8) {
                t.more_dots
            } else if t.more_dots == "left" {
                "right"
            } else {
                "left"
            };
            let r = json!({"trial_id": t.id, "chosen_side": side, "latency_ms": rng.random_range(300.0..3000.0)});
            let (status, body) = call(app, "POST", &uri, Some(r)).await?;
            ensure(status == StatusCode::OK, || {
                format!("valid response rejected with {status}: {body}")
            })?;
            let fb: Value = serde_json::from_str(&body).map_err(|e| e.to_string())?;
            misjudged += usize::from(fb["correct"] != json!(side == t.more_dots));
        }
        created.push((id, answered));
    }
    Ok((created, bad_accepted, misjudged))
}

async fn exports(app: &axum::Router, created: &[(String, usize)]) -> Result<Vec<String>, String> {
    let mut out = Vec::with_capacity(created.len());
    for (id, _) in created {
        let (status, csv) = call(app, "GET", &format!("/sessions/{id}/export"), None).await?;
        ensure(status == StatusCode::OK, || {
            format!("export of {id} returned {status}")
        })?;
        out.push(csv);
    }
    Ok(out)
}

fn service() -> Outcome {
    const SESSIONS: usize = 1000;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    rt.block_on(async {
        let (created, bad_accepted, misjudged, before) = {
            let store = Arc::new(SessionStore::open(dir.path(), 17).map_err(|e| e.to_string())?);
            let app = router(store, None);
            let (created, bad, mis) = simulate_sessions(&app, SESSIONS).await?;
            let before = exports(&app, &created).await?;
            (created, bad, mis, before)
        };
        // a crash mid-append leaves a torn final line
        for (id, _) in created.iter().step_by(7) {
            use std::io::Write;
            let mut f = std::fs::OpenOptions::new()
                .append(true)
                .open(dir.path().join(format!("{id}.jsonl")))
                .map_err(|e| e.to_string())?;
            f.write_all(br#"{"event":"response","response":{"trial_id":"t"#).map_err(|e| e.to_string())?;
        }
        let store = Arc::new(SessionStore::open(dir.path(), 17).map_err(|e| e.to_string())?);
        ensure(store.len() == SESSIONS, || format!("{} sessions after restart", store.len()))?;
        let app = router(store, None);
        let after = exports(&app, &created).await?;
        let changed = before.iter().zip(&after).filter(|(a, b)| a != b).count();

        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (mut parse_errors, mut rows) = (0, 0);
        for ((id, answered), csv) in created.iter().zip(&after) {
            let path = out.path().join(format!("{id}.csv"));
            std::fs::write(&path, csv).map_err(|e| e.to_string())?;
            match parse_annotation_file(&path) {
                Ok(recs) if recs.len() == *answered => rows += recs.len(),
                _ => parse_errors += 1,
            }
        }
        let detail = format!(
            "{SESSIONS} sessions, {rows} rows; bad acceptances {bad_accepted}, misjudged {misjudged}, changed exports {changed}, parse errors {parse_errors}"
        );
        ensure(bad_accepted == 0 && misjudged == 0 && changed == 0 && parse_errors == 0, || detail.clone())?;
        Ok(detail)
    })
}

// ---------------------------------------------------------------- driver

type SharedData = Option<Result<PreparedData<f32>, String>>;
type Criterion = Box<dyn FnOnce(&mut SharedData) -> Outcome>;

/// The 2k-trial set, generated on first use.
fn prepared(data: &mut SharedData) -> Result<&PreparedData<f32>, String> {
    data.get_or_insert_with(synthetic_data)
        .as_ref()
        .map_err(Clone::clone)
}

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let selected =
        |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut data: SharedData = None;
    let criteria: Vec<(&str, Criterion)> = vec![
        ("contrastive-oracle", Box::new(|_| contrastive_oracle())),
        ("weighted-sampling", Box::new(|_| weighted_sampling())),
        ("gradient-checks", Box::new(|_| gradient_checks())),
        ("stimulus-invariants", Box::new(|_| stimulus_invariants())),
        ("analysis-fixtures", Box::new(|_| analysis_fixtures())),
        (
            "calibration-round-trip",
            Box::new(|_| calibration_round_trip()),
        ),
        ("learnability", Box::new(|d| learnability(prepared(d)?))),
        ("metric-cases", Box::new(|_| metric_cases())),
        ("ablation", Box::new(|d| ablation(prepared(d)?))),
        ("service", Box::new(|_| service())),
    ];

    let mut failed = 0;
    let mut ran = 0;
    for (name, f) in criteria {
        if !selected(name) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut data))).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} ({secs:.1} s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} ({secs:.1} s)");
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
