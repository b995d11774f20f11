use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use ndarray::ArrayView2;
use uqwiz::ensemble::builtin::{self, TrainParams};
use uqwiz::ensemble::{is_ensemble_dir, ContextHandlerKind, EnsembleError, LazyEnsemble, PoolConfig, TaskRef};
use uqwiz::metrics;
use uqwiz::nnengine::{NnError, PredictOptions, SequentialModel, TrainingHistory};
use uqwiz::persist::{self, Dataset, DatasetSource};
use uqwiz::quantifiers::{Predictions, QuantifiedResult, Quantifier, QuantifierError};

use crate::args::{Cli, Command, PoolArgs, QuantifyArgs, TrainArgs};
use crate::report::{self, BenchRow, EvaluateRow, Prediction, PredictRow, TrainRow};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation; exit code 2.
    Usage(String),
    /// The command could not complete; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn quantifier_error(e: QuantifierError) -> CliError {
    match e {
        QuantifierError::UnknownQuantifier { .. } | QuantifierError::InsufficientSamples { .. } => {
            CliError::Usage(e.to_string())
        }
        other => runtime(other),
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Quantifier(q) => quantifier_error(q),
            other => runtime(other),
        }
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::Quantifier(q) => quantifier_error(q),
            other => runtime(other),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct Globals<'a> {
    seed: u64,
    explicit_seed: Option<u64>,
    model: Option<&'a Path>,
    dataset: Option<&'a DatasetSource>,
    holdout: f64,
}

impl Globals<'_> {
    fn dataset(&self) -> Result<&DatasetSource> {
        self.dataset
            .ok_or_else(|| CliError::Usage("--dataset is required for this command".into()))
    }

    fn model(&self) -> Result<&Path> {
        self.model
            .ok_or_else(|| CliError::Usage("--model is required for this command".into()))
    }

    fn load_data(&self) -> Result<Dataset> {
        self.dataset()?.load(self.seed).map_err(runtime)
    }

    /// The rows predict and evaluate work on.
    fn eval_split(&self) -> Result<Dataset> {
        let data = self.load_data()?;
        if self.holdout > 0.0 {
            Ok(data.split(1.0 - self.holdout).1)
        } else {
            Ok(data)
        }
    }

    fn train_params(&self, train: &TrainArgs) -> Result<TrainParams> {
        let mut p = TrainParams::new(train.arch.clone(), self.dataset()?.clone());
        p.data_seed = self.seed;
        p.train_fraction = 1.0 - self.holdout;
        p.epochs = train.epochs;
        p.batch_size = train.batch_size;
        p.learning_rate = train.learning_rate;
        Ok(p)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if !(0.0..1.0).contains(&cli.holdout) {
        return Err(CliError::Usage(format!("--holdout must be in [0, 1), got {}", cli.holdout)));
    }
    let globals = Globals {
        seed: cli.seed.unwrap_or(0),
        explicit_seed: cli.seed,
        model: cli.model.as_deref(),
        dataset: cli.dataset.as_ref(),
        holdout: cli.holdout,
    };
    let output = cli.output.as_deref();
    let emit = |r: std::io::Result<()>| r.map_err(|e| CliError::Runtime(format!("cannot write report: {e}")));
    match &cli.command {
        Command::TrainStochastic { train } => {
            let rows = train_stochastic(&globals, train)?;
            emit(report::write(&rows, cli.format, output))
        }
        Command::TrainEnsemble {
            train,
            pool,
            num_models,
            model_dir,
        } => {
            let dir = model_dir
                .as_deref()
                .or(globals.model)
                .ok_or_else(|| CliError::Usage("--model-dir (or --model) is required".into()))?;
            let rows = train_ensemble(&globals, train, pool, *num_models, dir)?;
            emit(report::write(&rows, cli.format, output))
        }
        Command::Predict {
            quantify,
            as_confidence,
        } => {
            let rows = predict(&globals, quantify, *as_confidence)?;
            emit(report::write(&rows, cli.format, output))
        }
        Command::Evaluate { quantify } => {
            let rows = evaluate(&globals, quantify)?;
            emit(report::write(&rows, cli.format, output))
        }
        Command::Benchmark {
            train,
            num_models,
            processes_list,
            context,
            respawn_after,
        } => {
            let rows = benchmark(&globals, train, *num_models, processes_list, context, *respawn_after)?;
            emit(report::write(&rows, cli.format, output))
        }
    }
}

fn accuracy(model: &SequentialModel, data: &Dataset) -> Result<Option<f64>> {
    let Some(labels) = data.labels() else {
        return Ok(None);
    };
    if labels.is_empty() {
        return Ok(None);
    }
    let out = model.forward(data.features.view())?;
    let correct = out
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &label)| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            best.0 == label
        })
        .count();
    Ok(Some(correct as f64 / labels.len() as f64))
}

fn train_stochastic(g: &Globals, train: &TrainArgs) -> Result<Vec<TrainRow>> {
    let path = g.model()?;
    let params = g.train_params(train)?;
    let (model, history) = builtin::train_member(&params, g.seed).map_err(runtime)?;
    persist::save_model_atomic(&model, path).map_err(runtime)?;
    let data = g.load_data()?;
    let scored = if g.holdout > 0.0 {
        data.split(1.0 - g.holdout).1
    } else {
        data
    };
    let acc = accuracy(&model, &scored)?;
    info!("saved {} after {} epochs", path.display(), train.epochs);
    Ok(vec![TrainRow {
        model_id: 0,
        final_loss: history.final_loss(),
        accuracy: acc,
    }])
}

fn train_ensemble(
    g: &Globals,
    train: &TrainArgs,
    pool: &PoolArgs,
    num_models: usize,
    dir: &Path,
) -> Result<Vec<TrainRow>> {
    pool.context
        .validate(pool.num_processes)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if pool.respawn_after == 0 {
        return Err(CliError::Usage("--respawn-after must be at least 1".into()));
    }
    if num_models < 2 {
        return Err(CliError::Usage(format!("--num-models must be at least 2, got {num_models}")));
    }
    if dir.exists() {
        let non_empty = dir.read_dir().map_err(runtime)?.next().is_some();
        if non_empty || !dir.is_dir() {
            return Err(CliError::Runtime(format!(
                "refusing to overwrite {}: directory is not empty",
                dir.display()
            )));
        }
    }
    let task = TaskRef::new(builtin::TRAIN).with_params(&g.train_params(train)?);
    let ensemble = LazyEnsemble::new(dir, num_models)?.with_context(pool.context.clone());
    let config = PoolConfig::new(pool.num_processes)
        .with_seed(g.seed)
        .with_respawn_after(pool.respawn_after);
    let run = ensemble.create::<TrainingHistory>(&task, &config)?;
    Ok(run
        .results
        .iter()
        .enumerate()
        .map(|(model_id, h)| TrainRow {
            model_id,
            final_loss: h.final_loss(),
            accuracy: None,
        })
        .collect())
}

fn check_samples(quantify: &QuantifyArgs) -> Result<()> {
    if quantify.quantifiers.iter().any(|q| q.is_sampling_based()) && quantify.num_samples < 2 {
        return Err(CliError::Usage(format!(
            "sampling-based quantifiers need --num-samples >= 2, got {}",
            quantify.num_samples
        )));
    }
    Ok(())
}

fn quantify(
    g: &Globals,
    args: &QuantifyArgs,
    x: ArrayView2<f64>,
    as_confidence: Option<bool>,
) -> Result<Vec<QuantifiedResult>> {
    check_samples(args)?;
    let path = g.model()?;
    if path.is_dir() {
        if !is_ensemble_dir(path) {
            return Err(CliError::Runtime(format!(
                "{} is a directory without an ensemble manifest",
                path.display()
            )));
        }
        let ensemble = LazyEnsemble::open(path)?;
        let config = PoolConfig::new(args.num_processes).with_seed(g.seed);
        Ok(ensemble.predict_quantified_many(x, &args.quantifiers, &config, as_confidence)?)
    } else {
        let mut model = persist::load_model(path).map_err(runtime)?;
        if let Some(seed) = g.explicit_seed {
            model.set_seed(seed);
        }
        let options = PredictOptions::default()
            .with_num_samples(args.num_samples)
            .with_as_confidence(as_confidence);
        Ok(model.predict_quantified_many(x, &args.quantifiers, &options)?)
    }
}

fn predict(g: &Globals, args: &QuantifyArgs, as_confidence: Option<bool>) -> Result<Vec<PredictRow>> {
    check_samples(args)?;
    let data = g.eval_split()?;
    let results = quantify(g, args, data.features.view(), as_confidence)?;
    let mut rows = Vec::with_capacity(data.len() * results.len());
    for i in 0..data.len() {
        for (q, r) in args.quantifiers.iter().zip(&results) {
            let prediction = match &r.predictions {
                Predictions::Classes(c) => Prediction::Class(c[i]),
                Predictions::Values(v) => Prediction::Values(v[i].clone()),
            };
            rows.push(PredictRow {
                input_index: i,
                prediction,
                score: r.scores[i],
                score_kind: r.score_kind.as_str(),
                quantifier: q.name(),
            });
        }
    }
    Ok(rows)
}

fn evaluate(g: &Globals, args: &QuantifyArgs) -> Result<Vec<EvaluateRow>> {
    check_samples(args)?;
    let data = g.eval_split()?;
    let labels = data
        .labels()
        .ok_or_else(|| CliError::Usage("evaluate needs a labeled classification dataset".into()))?
        .to_vec();
    let results = quantify(g, args, data.features.view(), None)?;
    args.quantifiers
        .iter()
        .zip(&results)
        .map(|(q, r): (&Quantifier, &QuantifiedResult)| {
            let e = metrics::evaluate(r, &labels)
                .ok_or_else(|| CliError::Runtime(format!("'{}' does not predict classes", q.name())))?;
            Ok(EvaluateRow {
                quantifier: q.name(),
                accuracy: e.accuracy,
                auroc: e.auroc,
                num_inputs: e.num_inputs,
                num_wrong: e.num_wrong,
            })
        })
        .collect()
}

fn parse_processes(list: &str) -> Result<Vec<usize>> {
    let mut ks = vec![0];
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let k: usize = part
            .parse()
            .map_err(|_| CliError::Usage(format!("invalid --processes-list entry '{part}'")))?;
        if !ks.contains(&k) {
            ks.push(k);
        }
    }
    Ok(ks)
}

fn occupancy(peaks: &BTreeMap<String, usize>) -> String {
    peaks
        .iter()
        .map(|(d, p)| format!("{d}={p}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn benchmark(
    g: &Globals,
    train: &TrainArgs,
    num_models: usize,
    processes_list: &str,
    context: &ContextHandlerKind,
    respawn_after: usize,
) -> Result<Vec<BenchRow>> {
    let ks = parse_processes(processes_list)?;
    for &k in &ks {
        context.validate(k).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if num_models < 2 {
        return Err(CliError::Usage(format!("--num-models must be at least 2, got {num_models}")));
    }
    if respawn_after == 0 {
        return Err(CliError::Usage("--respawn-after must be at least 1".into()));
    }
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    if cores < 2 {
        warn!("only {cores} core available; parallel timings will not show a speedup");
    }
    let task = TaskRef::new(builtin::TRAIN).with_params(&g.train_params(train)?);

    let mut rows: Vec<BenchRow> = Vec::new();
    for k in ks {
        let scratch = tempfile::tempdir().map_err(runtime)?;
        let dir: PathBuf = scratch.path().join("ensemble");
        let ensemble = LazyEnsemble::new(&dir, num_models)?.with_context(context.clone());
        let config = PoolConfig::new(k).with_seed(g.seed).with_respawn_after(respawn_after);
        let start = Instant::now();
        let run = ensemble.create::<TrainingHistory>(&task, &config)?;
        let seconds = start.elapsed().as_secs_f64();
        let baseline = rows.first().map_or(seconds, |b| b.wall_clock_seconds);
        let reduction = if baseline > 0.0 {
            100.0 * (1.0 - seconds / baseline)
        } else {
            0.0
        };
        eprintln!("processes={k}: {seconds:.3}s ({reduction:+.1}% reduction vs sequential)");
        rows.push(BenchRow {
            num_processes: k,
            context: if k == 0 { "main".to_string() } else { context.to_string() },
            wall_clock_seconds: seconds,
            reduction_percent: reduction,
            peak_concurrent_models: run.stats.peak_models_in_memory,
            per_slot_occupancy: occupancy(&run.stats.peak_slot_occupancy),
        });
    }
    Ok(rows)
}
