//! Acceptance suite: one PASS/FAIL/SKIP line per criterion on stderr.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use uqwiz::ensemble::builtin::{self, TrainParams};
use uqwiz::ensemble::{ContextHandlerKind, LazyEnsemble, Launcher, PoolConfig, Registry, Runtime, TaskRef};
use uqwiz::metrics;
use uqwiz::nnengine::{
    Architecture, LayerSpec, Loss, PredictOptions, SequentialModel, Targets, TrainConfig, TrainingHistory,
};
use uqwiz::persist::{self, generate_blobs, DatasetSource, PersistError};
use uqwiz::quantifiers::{
    self, Predictions, QuantifiedResult, RegressionSamples, SampledOutputs, ScoreKind, SingleOutputs,
};

uqwiz::worker_test_entry!(Registry::with_builtins());

enum Verdict {
    Pass(String),
    Skip(String),
}

type Check = Result<Verdict, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("{what} took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn runtime() -> Runtime {
    Runtime::new(Registry::with_builtins(), Launcher::test_harness())
}

fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

// ---------------------------------------------------------------------------
// 1. Brute-force quantifier oracle

fn first_max(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn nats(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    h
}

fn naive_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    m.iter().map(|x| x / rows.len() as f64).collect()
}

fn random_distribution(rng: &mut ChaCha8Rng, classes: usize, grid: bool) -> Vec<f64> {
    if grid {
        let mut counts = vec![0u32; classes];
        for _ in 0..16 {
            counts[rng.random_range(0..classes)] += 1;
        }
        counts.iter().map(|&c| c as f64 / 16.0).collect()
    } else {
        let logits: Vec<f64> = (0..classes).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter().map(|x| x / z).collect()
    }
}

struct Expected {
    preds: Vec<usize>,
    scores: Vec<f64>,
    kind: ScoreKind,
}

fn compare_classes(name: &str, got: &QuantifiedResult, want: &Expected, worst: &mut f64) -> Result<(), String> {
    ensure(got.score_kind == want.kind, || format!("{name}: wrong score kind"))?;
    ensure(got.predictions == Predictions::Classes(want.preds.clone()), || {
        format!("{name}: predictions {:?} != oracle {:?}", got.predictions, want.preds)
    })?;
    for (a, b) in got.scores.iter().zip(&want.scores) {
        *worst = worst.max((a - b).abs());
        ensure((a - b).abs() <= 1e-12, || format!("{name}: score {a} != oracle {b}"))?;
    }
    Ok(())
}

fn quantifier_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let instances = 1000;
    for _ in 0..instances {
        let n = rng.random_range(1..=5);
        let s = rng.random_range(2..=8);
        let c = rng.random_range(2..=4);
        let grid = rng.random_bool(0.5);
        let samples: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| (0..s).map(|_| random_distribution(&mut rng, c, grid)).collect())
            .collect();

        // Point predictors on the first sample of each input.
        let single_rows: Vec<Vec<f64>> = samples.iter().map(|x| x[0].clone()).collect();
        let single = SingleOutputs::from_rows(&single_rows).map_err(|e| e.to_string())?;
        let mut ms = Expected {
            preds: vec![],
            scores: vec![],
            kind: ScoreKind::Confidence,
        };
        let mut pcs = Expected {
            preds: vec![],
            scores: vec![],
            kind: ScoreKind::Confidence,
        };
        for row in &single_rows {
            let best = first_max(row);
            let mut second = f64::NEG_INFINITY;
            for (i, &v) in row.iter().enumerate() {
                if i != best && v > second {
                    second = v;
                }
            }
            ms.preds.push(best);
            ms.scores.push(row[best]);
            pcs.preds.push(best);
            pcs.scores.push(row[best] - second);
        }
        compare_classes("max_softmax", &quantifiers::max_softmax(&single).unwrap(), &ms, &mut worst)?;
        compare_classes(
            "prediction_confidence_score",
            &quantifiers::prediction_confidence_score(&single).unwrap(),
            &pcs,
            &mut worst,
        )?;

        // Sampling-based quantifiers.
        let flat: Vec<f64> = samples.iter().flatten().flatten().copied().collect();
        let sampled = SampledOutputs::new(Array3::from_shape_vec((n, s, c), flat).unwrap()).map_err(|e| e.to_string())?;
        let mut vr = Expected {
            preds: vec![],
            scores: vec![],
            kind: ScoreKind::Uncertainty,
        };
        let mut pe = Expected {
            preds: vec![],
            scores: vec![],
            kind: ScoreKind::Uncertainty,
        };
        let mut mi = Expected {
            preds: vec![],
            scores: vec![],
            kind: ScoreKind::Uncertainty,
        };
        let mut mean_sm = Expected {
            preds: vec![],
            scores: vec![],
            kind: ScoreKind::Confidence,
        };
        for input in &samples {
            let mut votes = vec![0.0; c];
            for sample in input {
                votes[first_max(sample)] += 1.0;
            }
            let mode = first_max(&votes);
            vr.preds.push(mode);
            vr.scores.push(1.0 - votes[mode] / s as f64);

            let mean = naive_mean(input);
            let top = first_max(&mean);
            pe.preds.push(top);
            pe.scores.push(nats(&mean));
            let expected_h: f64 = input.iter().map(|p| nats(p)).sum::<f64>() / s as f64;
            mi.preds.push(top);
            mi.scores.push((nats(&mean) - expected_h).max(0.0));
            mean_sm.preds.push(top);
            mean_sm.scores.push(mean[top]);
        }
        compare_classes("variation_ratio", &quantifiers::variation_ratio(&sampled).unwrap(), &vr, &mut worst)?;
        compare_classes("predictive_entropy", &quantifiers::predictive_entropy(&sampled).unwrap(), &pe, &mut worst)?;
        compare_classes("mutual_information", &quantifiers::mutual_information(&sampled).unwrap(), &mi, &mut worst)?;
        compare_classes("mean_softmax", &quantifiers::mean_softmax(&sampled).unwrap(), &mean_sm, &mut worst)?;

        // Standard deviation on regression samples.
        let d = rng.random_range(1..=3);
        let reg: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| {
                (0..s)
                    .map(|_| {
                        (0..d)
                            .map(|_| {
                                if grid {
                                    rng.random_range(-8..=8) as f64 / 4.0
                                } else {
                                    3.0 * rng.sample::<f64, _>(StandardNormal)
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let flat: Vec<f64> = reg.iter().flatten().flatten().copied().collect();
        let samples = RegressionSamples::new(Array3::from_shape_vec((n, s, d), flat).unwrap()).unwrap();
        let got = quantifiers::standard_deviation(&samples).unwrap();
        ensure(got.score_kind == ScoreKind::Uncertainty, || "standard_deviation: wrong kind".into())?;
        let Predictions::Values(pred_values) = &got.predictions else {
            return Err("standard_deviation: expected value predictions".into());
        };
        for (i, input) in reg.iter().enumerate() {
            let mean = naive_mean(input);
            let mut total = 0.0;
            for dim in 0..d {
                let mut var = 0.0;
                for sample in input {
                    var += (sample[dim] - mean[dim]) * (sample[dim] - mean[dim]);
                }
                total += (var / s as f64).sqrt();
            }
            let want = total / d as f64;
            for (a, b) in pred_values[i].iter().zip(&mean) {
                worst = worst.max((a - b).abs());
                ensure((a - b).abs() <= 1e-12, || format!("standard_deviation: mean {a} != oracle {b}"))?;
            }
            worst = worst.max((got.scores[i] - want).abs());
            ensure((got.scores[i] - want).abs() <= 1e-12, || {
                format!("standard_deviation: {} != oracle {want}", got.scores[i])
            })?;
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, 5.0, "oracle comparison")?;
    Ok(Verdict::Pass(format!(
        "{instances} instances x 7 quantifiers, max |diff| {worst:.1e}, {:.2} s",
        elapsed.as_secs_f64()
    )))
}

// ---------------------------------------------------------------------------
// 2. Analytic fixtures

fn analytic_fixtures() -> Check {
    let uniform = SampledOutputs::new(Array3::from_elem((1, 3, 4), 0.25)).unwrap();
    let pe = quantifiers::predictive_entropy(&uniform).unwrap().scores[0];
    ensure((pe - 4f64.ln()).abs() <= 1e-12, || format!("entropy of uniform C=4: {pe}"))?;

    let opposite = SampledOutputs::new(
        Array3::from_shape_vec((1, 2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
    )
    .unwrap();
    let mi = quantifiers::mutual_information(&opposite).unwrap().scores[0];
    ensure((mi - 2f64.ln()).abs() <= 1e-12, || format!("MI of opposite one-hots: {mi}"))?;

    let unanimous = SampledOutputs::new(
        Array3::from_shape_vec((1, 4, 3), [0.1, 0.2, 0.7].repeat(4)).unwrap(),
    )
    .unwrap();
    let vr = quantifiers::variation_ratio(&unanimous).unwrap().scores[0];
    ensure(vr == 0.0, || format!("variation ratio of unanimous samples: {vr}"))?;
    Ok(Verdict::Pass(format!("H={pe:.15}, MI={mi:.15}, VR={vr}")))
}

// ---------------------------------------------------------------------------
// 3. Stochastic mode

fn stochastic_mode_contract() -> Check {
    let start = Instant::now();
    let mut model = SequentialModel::build(
        vec![LayerSpec::dense(3, 8), LayerSpec::relu(), LayerSpec::dropout(0.5)],
        11,
    )
    .map_err(|e| e.to_string())?;
    let x = Array2::from_shape_vec((1, 3), vec![0.8, -0.4, 1.5]).unwrap();

    model.set_stochastic_mode(false);
    let reference = model.forward(x.view()).unwrap();
    for _ in 0..100 {
        let again = model.forward(x.view()).unwrap();
        ensure(again == reference, || "mode off: forward passes differ".into())?;
    }

    let n = 10_000;
    let batch = x.broadcast((n, 3)).unwrap().to_owned();
    model.set_stochastic_mode(true);
    let samples = model.forward(batch.view()).unwrap();
    model.set_stochastic_mode(false);

    let mut worst_z: f64 = 0.0;
    let mut active = 0;
    for unit in 0..reference.ncols() {
        let det = reference[[0, unit]];
        let col = samples.column(unit);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        if det > 0.0 {
            active += 1;
            let dropped = col.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
            ensure((0.45..0.55).contains(&dropped), || format!("unit {unit}: drop rate {dropped}"))?;
        }
        let z = if se > 0.0 { (mean - det).abs() / se } else { (mean - det).abs() };
        worst_z = worst_z.max(z);
        ensure((mean - det).abs() <= 3.0 * se, || {
            format!("unit {unit}: mean {mean} vs deterministic {det} (se {se})")
        })?;
    }
    ensure(active > 0, || "no active unit to test".into())?;
    within(start.elapsed(), 30.0, "stochastic mode check")?;
    Ok(Verdict::Pass(format!(
        "100 identical passes; {active} active units, max |mean-det| = {worst_z:.2} SE over {n} samples"
    )))
}

// ---------------------------------------------------------------------------
// 4. PPQ and SBQ in one call

fn mixed_quantifiers() -> Check {
    let mut model = SequentialModel::build(
        vec![
            LayerSpec::dense(4, 16),
            LayerSpec::relu(),
            LayerSpec::dropout(0.3),
            LayerSpec::dense(16, 3),
            LayerSpec::softmax(),
        ],
        5,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Array2::from_shape_simple_fn((20, 4), || rng.sample::<f64, _>(StandardNormal));
    let opts = PredictOptions::default();
    let both = model
        .predict_quantified_many(x.view(), &["pcs", "var_ratio"], &opts)
        .map_err(|e| e.to_string())?;
    let alone = model.predict_quantified(x.view(), "pcs", &opts).map_err(|e| e.to_string())?;
    ensure(both.len() == 2, || format!("{} results", both.len()))?;
    ensure(both[0] == alone, || "pcs differs from the PPQ-only call".into())?;
    ensure(both[1].score_kind == ScoreKind::Uncertainty && both[1].len() == 20, || {
        "var_ratio result malformed".into()
    })?;
    Ok(Verdict::Pass("pcs bit-identical to PPQ-only call; var_ratio present".into()))
}

// ---------------------------------------------------------------------------
// 5. Gradient check

fn gradient_check() -> Check {
    let mut model = SequentialModel::build(
        vec![
            LayerSpec::dense(2, 4),
            LayerSpec::relu(),
            LayerSpec::dense(4, 2),
            LayerSpec::softmax(),
        ],
        3,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for d in model.dense_layers_mut() {
        d.biases_mut().mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let x = Array2::from_shape_simple_fn((6, 2), || rng.sample::<f64, _>(StandardNormal));
    let targets = Targets::Labels(vec![0, 1, 1, 0, 1, 0]);
    let loss = Loss::CrossEntropy;
    let (_, grads) = model.loss_and_gradients(x.view(), &targets, loss).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let layers = grads.len();
    for li in 0..layers {
        let (rows, cols) = grads[li].weights.dim();
        let mut params: Vec<(Option<(usize, usize)>, usize)> = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                params.push((Some((r, c)), 0));
            }
            params.push((None, r));
        }
        for (w, b) in params {
            let bump = |m: &mut SequentialModel, delta: f64| {
                let d = m.dense_layers_mut().nth(li).unwrap();
                match w {
                    Some(idx) => d.weights_mut()[idx] += delta,
                    None => d.biases_mut()[b] += delta,
                }
            };
            bump(&mut model, h);
            let up = model.loss(x.view(), &targets, loss).unwrap();
            bump(&mut model, -2.0 * h);
            let down = model.loss(x.view(), &targets, loss).unwrap();
            bump(&mut model, h);
            let numeric = (up - down) / (2.0 * h);
            let analytic = match w {
                Some(idx) => grads[li].weights[idx],
                None => grads[li].biases[b],
            };
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            checked += 1;
            ensure(rel <= 1e-4, || {
                format!("layer {li} {w:?}/{b}: analytic {analytic} vs numeric {numeric} (rel {rel:.2e})")
            })?;
        }
    }
    Ok(Verdict::Pass(format!("{checked} parameters, max relative error {worst:.2e}")))
}

// ---------------------------------------------------------------------------
// 6. Ensemble determinism and laziness

fn train_task(points: usize, epochs: usize, hidden: usize, data_seed: u64) -> TaskRef {
    let mut p = TrainParams::new(
        Architecture {
            hidden: vec![hidden],
            dropout: None,
        },
        DatasetSource::Blobs {
            points,
            classes: 3,
            spread: 1.0,
        },
    );
    p.epochs = epochs;
    p.data_seed = data_seed;
    TaskRef::new(builtin::TRAIN).with_params(&p)
}

fn ensemble_determinism() -> Check {
    let task = train_task(150, 5, 8, 1);
    let mut images: Vec<Vec<Vec<u8>>> = Vec::new();
    let mut peaks = Vec::new();
    for k in [0, 0, 2, 4] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let e = LazyEnsemble::new(dir.path(), 6).unwrap().with_runtime(runtime());
        let run = e
            .create::<TrainingHistory>(&task, &PoolConfig::new(k).with_seed(77))
            .map_err(|e| e.to_string())?;
        ensure((1..=k.max(1)).contains(&run.stats.peak_models_in_memory), || {
            format!("k={k}: {} models in memory at once", run.stats.peak_models_in_memory)
        })?;
        peaks.push(format!("k={k}:{}", run.stats.peak_models_in_memory));
        images.push((0..6).map(|i| fs::read(e.model_path(i)).unwrap()).collect());
    }
    for (i, img) in images.iter().enumerate().skip(1) {
        ensure(*img == images[0], || format!("run {i} differs from the first k=0 run"))?;
    }
    let distinct: BTreeSet<&Vec<u8>> = images[0].iter().collect();
    ensure(distinct.len() == 6, || "members are not pairwise distinct".into())?;
    Ok(Verdict::Pass(format!(
        "6 models byte-identical for k=0 (twice), 2, 4; peak models {}",
        peaks.join(" ")
    )))
}

// ---------------------------------------------------------------------------
// 7. Parallel speedup and slot occupancy

fn timed_create(task: &TaskRef, k: usize, context: ContextHandlerKind) -> Result<(f64, uqwiz::ensemble::PoolStats), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let e = LazyEnsemble::new(dir.path(), 8).unwrap().with_runtime(runtime()).with_context(context);
    let start = Instant::now();
    let run = e
        .create::<TrainingHistory>(task, &PoolConfig::new(k).with_seed(5))
        .map_err(|e| e.to_string())?;
    Ok((start.elapsed().as_secs_f64(), run.stats))
}

fn parallel_speedup() -> Check {
    let start = Instant::now();
    let slots: ContextHandlerKind = "device_allocator:A=1,B=1".parse().unwrap();
    let (_, stats) = timed_create(&train_task(200, 5, 16, 2), 2, slots)?;
    ensure(stats.occupancy_log.iter().all(|e| e.occupancy <= 1), || {
        format!("slot occupancy exceeded 1: {:?}", stats.occupancy_log)
    })?;
    let occupancy = format!(
        "occupancy ok ({} events, peaks {:?})",
        stats.occupancy_log.len(),
        stats.peak_slot_occupancy
    );

    let task = train_task(4000, 50, 16, 2);
    let (t0, _) = timed_create(&task, 0, ContextHandlerKind::DynamicGrowth)?;
    let (t4, _) = timed_create(&task, 4, ContextHandlerKind::DynamicGrowth)?;
    within(start.elapsed(), 300.0, "speedup measurement")?;
    let ratio = t4 / t0;
    let timing = format!("k=0 {t0:.2} s, k=4 {t4:.2} s, ratio {ratio:.2}");
    let n = cores();
    if n < 4 {
        return Ok(Verdict::Skip(format!(
            "{occupancy}; speedup not assessable on {n} core(s), needs >= 4 ({timing})"
        )));
    }
    ensure(ratio <= 0.65, || format!("{occupancy}; speedup too small: {timing}"))?;
    Ok(Verdict::Pass(format!("{occupancy}; {timing}")))
}

// ---------------------------------------------------------------------------
// 8. Misprediction detection

fn misprediction_detection() -> Check {
    let start = Instant::now();
    let names = ["var_ratio", "pred_entropy", "pcs"];
    let mut aurocs: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for seed in 0..10u64 {
        let data = generate_blobs(900, 3, 4.0, seed).map_err(|e| e.to_string())?;
        let (train, test) = data.split(2.0 / 3.0);
        let mut model = SequentialModel::build(
            Architecture {
                hidden: vec![32],
                dropout: Some(0.2),
            }
            .layer_specs(2, 3, quantifiers::ProblemType::Classification),
            seed,
        )
        .unwrap();
        let config = TrainConfig {
            epochs: 30,
            seed,
            ..TrainConfig::default()
        };
        model
            .fit(train.features.view(), &train.targets, &config)
            .map_err(|e| e.to_string())?;
        let results = model
            .predict_quantified_many(test.features.view(), &names, &PredictOptions::default())
            .map_err(|e| e.to_string())?;
        for (q, r) in results.iter().enumerate() {
            let eval = metrics::evaluate(r, test.labels().unwrap()).unwrap();
            aurocs[q].push(eval.auroc.unwrap_or(f64::NAN));
        }
    }
    let mut parts = Vec::new();
    for (q, name) in names.iter().enumerate() {
        let values = &aurocs[q];
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let wins = values.iter().filter(|&&a| a > 0.5).count();
        let p = metrics::sign_test_p_value(wins, values.len());
        parts.push(format!("{name} mean {mean:.3} ({wins}/10, p={p:.4})"));
        ensure(mean > 0.5 && p <= 0.05, || format!("{name}: mean AUROC {mean:.3}, {wins}/10 above 0.5, p={p:.4}"))?;
    }
    within(start.elapsed(), 120.0, "misprediction experiment")?;
    Ok(Verdict::Pass(format!("{}, {:.1} s", parts.join("; "), start.elapsed().as_secs_f64())))
}

// ---------------------------------------------------------------------------
// 9. Ensemble vs atomic accuracy

fn argmax_accuracy(out: &Array2<f64>, labels: &[usize]) -> f64 {
    let correct = out
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &l)| first_max(&row.to_vec()) == l)
        .count();
    correct as f64 / labels.len() as f64
}

fn ensemble_beats_atomic() -> Check {
    let mut ens_acc = Vec::new();
    let mut member_acc = Vec::new();
    for seed in 0..10u64 {
        let source = DatasetSource::Blobs {
            points: 600,
            classes: 3,
            spread: 3.0,
        };
        let mut p = TrainParams::new(
            Architecture {
                hidden: vec![16],
                dropout: None,
            },
            source.clone(),
        );
        p.data_seed = seed;
        p.train_fraction = 0.5;
        p.epochs = 20;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let e = LazyEnsemble::new(dir.path(), 5).unwrap().with_runtime(runtime());
        e.create::<TrainingHistory>(&TaskRef::new(builtin::TRAIN).with_params(&p), &PoolConfig::new(0).with_seed(seed))
            .map_err(|e| e.to_string())?;
        let test = source.load(seed).unwrap().split(0.5).1;
        let labels = test.labels().unwrap();
        let r = e
            .predict_quantified(test.features.view(), "ensembling", &PoolConfig::new(0), None)
            .map_err(|e| e.to_string())?;
        let eval = metrics::evaluate(&r, labels).unwrap();
        ens_acc.push(eval.accuracy);
        for i in 0..5 {
            let m = e.load_model(i).unwrap();
            member_acc.push(argmax_accuracy(&m.forward(test.features.view()).unwrap(), labels));
        }
    }
    let ens = ens_acc.iter().sum::<f64>() / ens_acc.len() as f64;
    let atomic = member_acc.iter().sum::<f64>() / member_acc.len() as f64;
    ensure(ens >= atomic, || format!("ensemble {ens:.4} < members {atomic:.4}"))?;
    Ok(Verdict::Pass(format!("mean ensemble accuracy {ens:.4} >= mean member accuracy {atomic:.4}")))
}

// ---------------------------------------------------------------------------
// 10. Persistence round-trip

fn random_model(rng: &mut ChaCha8Rng) -> SequentialModel {
    let input = rng.random_range(1..=5);
    let depth = rng.random_range(0..=3);
    let dropout = rng.random_bool(0.5).then(|| rng.random_range(0.0..0.9));
    let mut specs = Vec::new();
    let mut width = input;
    for _ in 0..depth {
        let h = rng.random_range(1..=6);
        specs.push(LayerSpec::dense(width, h));
        specs.push(LayerSpec::relu());
        if let Some(p) = dropout {
            specs.push(LayerSpec::dropout(p));
        }
        width = h;
    }
    let out = rng.random_range(1..=4);
    specs.push(LayerSpec::dense(width, out));
    if out >= 2 && rng.random_bool(0.5) {
        specs.push(LayerSpec::softmax());
    }
    let mut m = SequentialModel::build(specs, rng.random()).unwrap();
    for d in m.dense_layers_mut() {
        d.biases_mut().mapv_inplace(|_| rng.random_range(-1.0..1.0));
    }
    m
}

fn persistence_round_trip() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..100 {
        let m = random_model(&mut rng);
        let path = dir.path().join(format!("m{i}.uwm"));
        persist::save_model(&m, &path).map_err(|e| e.to_string())?;
        let back = persist::load_model(&path).map_err(|e| e.to_string())?;
        let x = Array2::from_shape_simple_fn((4, m.input_dim()), || 3.0 * rng.sample::<f64, _>(StandardNormal));
        ensure(m.forward(x.view()).unwrap() == back.forward(x.view()).unwrap(), || {
            format!("model {i}: forward outputs differ after reload")
        })?;
    }

    let bytes = fs::read(dir.path().join("m0.uwm")).unwrap();
    let mut corrupted = bytes.clone();
    let last_param = corrupted.len() - 9;
    corrupted[last_param] ^= 0x40;
    let truncated = &bytes[..bytes.len() - 5];
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    ensure(matches!(persist::decode_model(&corrupted), Err(PersistError::Checksum { .. })), || {
        "corrupted byte not reported as checksum error".into()
    })?;
    ensure(matches!(persist::decode_model(truncated), Err(PersistError::Truncated { .. })), || {
        "truncated file not reported as truncation".into()
    })?;
    ensure(matches!(persist::decode_model(&bad_magic), Err(PersistError::BadMagic)), || {
        "bad magic not reported".into()
    })?;
    Ok(Verdict::Pass(
        "100 random models bit-identical after reload; checksum/truncation/magic errors raised".into(),
    ))
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("quantifier oracle equivalence", quantifier_oracle),
        ("analytic fixtures", analytic_fixtures),
        ("stochastic-mode contract", stochastic_mode_contract),
        ("PPQ/SBQ coexistence", mixed_quantifiers),
        ("gradient check", gradient_check),
        ("ensemble determinism and laziness", ensemble_determinism),
        ("parallel speedup and slot occupancy", parallel_speedup),
        ("misprediction detection", misprediction_detection),
        ("ensemble beats atomic models", ensemble_beats_atomic),
        ("persistence round-trip", persistence_round_trip),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let line = match outcome {
            Ok(Verdict::Pass(detail)) => format!("criterion {n:>2} PASS  {name}: {detail}"),
            Ok(Verdict::Skip(detail)) => format!("criterion {n:>2} SKIP  {name}: {detail}"),
            Err(detail) => {
                failed.push(n);
                format!("criterion {n:>2} FAIL  {name}: {detail}")
            }
        };
        let _ = writeln!(err, "{line}");
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
