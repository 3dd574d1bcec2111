//! `cen train|eval|explain|diagnose|experiment`.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 training divergence, 1 anything else.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{load_table, CsvSource, DataSource, RunConfig};
use crate::data::load_csv;
use crate::dataset::Dataset;
use crate::diagnostics::fano_diagnostic;
use crate::error::CenError;
use crate::experiments::{self as exp, write_csv, EXPERIMENTS};
use crate::explanations::{curve_from_probs, SurvivalTarget};
use crate::metrics::evaluate;
use crate::model::{CenModel, Family, Prediction};
use crate::numeric::Rng;
use crate::training::train;

#[derive(Debug, Parser)]
#[command(name = "cen", version, about = "Contextual explanation networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes checkpoint.json, history.csv and metrics.json.
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes metrics.json.
    Eval(EvalArgs),
    /// Dump per-instance explanations; writes explanations.csv (and survival_curves.csv).
    Explain(ExplainArgs),
    /// Fano contribution diagnostic; writes fano.json.
    Diagnose(EvalArgs),
    /// Run a named sweep; writes results.csv.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV data file (replaces the configured data source).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON column schema for --data.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated survival quantiles, e.g. 0.25,0.5,0.75.
    #[arg(long, value_delimiter = ',')]
    pub quantiles: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    pub quantiles: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Half-open row range `start:end` (either side may be empty).
    #[arg(long)]
    pub rows: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// One of: dict-size, sample-efficiency, noisy-features, incomplete-features, entropy-reg, lime-recovery, fano.
    pub name: String,
    /// JSON overrides for the experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// First seed; repeats use consecutive seeds.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: CenError,
}

impl From<CenError> for Failure {
    fn from(error: CenError) -> Self {
        let code = match &error {
            CenError::Config(_) => 2,
            CenError::Ingestion { .. } | CenError::Csv(_) => 3,
            CenError::Diverged { .. } => 4,
            _ => 1,
        };
        Failure { code, error }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        CenError::from(e).into()
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        error: CenError::Config(msg.into()),
    }
}

/// Anything that goes wrong while reading data is a data error unless it is a configuration problem.
fn data_failure(e: CenError) -> Failure {
    match e {
        CenError::Config(_) => usage(e.to_string().trim_start_matches("configuration error: ").to_string()),
        error => Failure { code: 3, error },
    }
}

/// Parses `args` (including the program name) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

/// Config file (or defaults) with flag overrides applied and validated.
fn run_config(args: &DataArgs, quantiles: Option<&Vec<f64>>) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(path) = &args.data {
        let preprocess = match &cfg.data {
            DataSource::Csv(src) => src.preprocess.clone(),
            _ => Default::default(),
        };
        cfg.data = DataSource::Csv(CsvSource {
            path: path.clone(),
            schema: args.schema.clone(),
            preprocess,
        });
    } else if let (Some(schema), DataSource::Csv(src)) = (&args.schema, &mut cfg.data) {
        src.schema = Some(schema.clone());
    }
    if let Some(q) = quantiles {
        cfg.quantiles = q.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| usage(format!("cannot create output directory {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(CenError::from)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let cfg = run_config(&args.data, args.quantiles.as_ref())?;
    let data = cfg.prepare().map_err(data_failure)?;
    let tc = cfg.train_config();
    let model = cfg
        .model
        .build(data.train.context_dim(), data.train.attribute_dim(), tc.regularization, &mut Rng::new(cfg.seed).fork(7))?;
    let (model, history) = train(model, &data.train, None, &tc)?;
    let metrics = evaluate(&model, &data.test, &cfg.quantiles, data.survival_reference(), data.width)?;

    create_out(&args.data.out)?;
    let mut ckpt = Checkpoint::new(model);
    ckpt.context_names = data.context_names.clone();
    ckpt.attribute_names = data.attribute_names.clone();
    ckpt.preprocess = data.plan.clone();
    ckpt.schema = data.schema.clone();
    ckpt.config = Some(serde_json::to_value(&cfg).map_err(CenError::from)?);
    ckpt.save(&args.data.out.join("checkpoint.json"))?;
    history.write_csv(BufWriter::new(File::create(args.data.out.join("history.csv"))?))?;
    write_json(&args.data.out.join("metrics.json"), &metrics)?;
    log::info!("best epoch {}, test metrics written to {}", history.best_epoch, args.data.out.display());
    Ok(())
}

/// Evaluation data: `--data` through the checkpoint's preprocessing, or the test split of the run config.
struct EvalData {
    data: Dataset,
    reference: Option<Vec<SurvivalTarget>>,
    width: f64,
    quantiles: Vec<f64>,
    seed: u64,
}

fn eval_data(ckpt: &Checkpoint, args: &DataArgs, quantiles: Option<&Vec<f64>>) -> CliResult<EvalData> {
    if let (Some(path), None) = (&args.data, &args.config) {
        let plan = ckpt
            .preprocess
            .as_ref()
            .ok_or_else(|| usage("checkpoint has no preprocessing plan; pass --config to regenerate its data"))?;
        if !path.is_file() {
            return Err(usage(format!("data file {} does not exist", path.display())));
        }
        let table = match (&args.schema, &ckpt.schema) {
            (None, Some(schema)) => load_csv(path, Some(schema)),
            (given, _) => load_table(path, given.as_deref()),
        }
        .map_err(data_failure)?;
        let (data, _) = plan.transform(&table).map_err(data_failure)?;
        check_shapes(&ckpt.model, &data)?;
        return Ok(EvalData {
            data,
            reference: None,
            width: plan.survival.map_or(1.0, |b| b.width),
            quantiles: quantiles.cloned().unwrap_or_else(|| vec![0.25, 0.5, 0.75]),
            seed: args.seed.unwrap_or(0),
        });
    }
    if args.config.is_none() {
        return Err(usage("need --config or --data to know what to evaluate on"));
    }
    let cfg = run_config(args, quantiles)?;
    let prepared = cfg.prepare().map_err(data_failure)?;
    check_shapes(&ckpt.model, &prepared.test)?;
    Ok(EvalData {
        reference: prepared.survival_reference().map(<[_]>::to_vec),
        width: prepared.width,
        data: prepared.test,
        quantiles: cfg.quantiles,
        seed: cfg.seed,
    })
}

fn check_shapes(model: &CenModel, data: &Dataset) -> CliResult<()> {
    if model.context_dim() != data.context_dim() || model.attribute_dim() != data.attribute_dim() {
        return Err(Failure {
            code: 3,
            error: CenError::invalid(format!(
                "checkpoint expects {} context and {} attribute columns, data has {} and {}",
                model.context_dim(),
                model.attribute_dim(),
                data.context_dim(),
                data.attribute_dim()
            )),
        });
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ed = eval_data(&ckpt, &args.data, args.quantiles.as_ref())?;
    let metrics = evaluate(&ckpt.model, &ed.data, &ed.quantiles, ed.reference.as_deref(), ed.width)?;
    create_out(&args.data.out)?;
    write_json(&args.data.out.join("metrics.json"), &metrics)
}

fn cmd_diagnose(args: EvalArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ed = eval_data(&ckpt, &args.data, None)?;
    let report = fano_diagnostic(&ckpt.model, &ed.data, &mut Rng::new(ed.seed).fork(13))?;
    create_out(&args.data.out)?;
    write_json(&args.data.out.join("fano.json"), &report)
}

fn parse_rows(spec: Option<&str>, n: usize) -> CliResult<std::ops::Range<usize>> {
    let Some(spec) = spec else { return Ok(0..n) };
    let (a, b) = spec
        .split_once(':')
        .ok_or_else(|| usage(format!("--rows expects start:end, got {spec:?}")))?;
    let parse = |s: &str, default: usize| -> CliResult<usize> {
        if s.trim().is_empty() {
            Ok(default)
        } else {
            s.trim().parse().map_err(|_| usage(format!("bad row index {s:?}")))
        }
    };
    let (start, end) = (parse(a, 0)?, parse(b, n)?.min(n));
    if start > end {
        return Err(usage(format!("empty row range {spec:?}")));
    }
    Ok(start..end)
}

/// Rows of explanations.csv: one per instance and class (linear) or time step (survival).
fn explanation_rows(model: &CenModel, data: &Dataset, rows: std::ops::Range<usize>, names: &[String]) -> CliResult<(Vec<String>, Vec<Vec<String>>, Vec<Vec<String>>)> {
    let k = model.dictionary.as_ref().map(|d| d.size());
    let d = model.attribute_dim();
    let mut header = vec!["instance".to_string()];
    header.push(match model.family {
        Family::Linear { .. } => "class".into(),
        Family::Survival { .. } => "step".into(),
    });
    header.extend(names.iter().map(|n| format!("w_{n}")));
    if matches!(model.family, Family::Linear { .. }) {
        header.push("bias".into());
    }
    if let Some(k) = k {
        header.extend((0..k).map(|j| format!("alpha_{j}")));
    }
    let mut out = Vec::new();
    let mut curves = Vec::new();
    for i in rows {
        let f = model.forward(data.contexts.row(i), data.attributes.row(i))?;
        let alpha_for = |row: usize| -> Vec<String> {
            match f.attention.len() {
                0 => vec![],
                1 => f.attention[0].iter().map(|a| a.to_string()).collect(),
                _ => f.attention[row].iter().map(|a| a.to_string()).collect(),
            }
        };
        match model.family {
            Family::Linear { classes, .. } => {
                for y in 0..classes {
                    let mut r = vec![i.to_string(), y.to_string()];
                    r.extend(f.theta[y * d..(y + 1) * d].iter().map(|w| w.to_string()));
                    r.push(f.theta[classes * d + y].to_string());
                    r.extend(alpha_for(y.min(f.attention.len().saturating_sub(1))));
                    out.push(r);
                }
            }
            Family::Survival { steps, .. } => {
                for t in 0..steps {
                    let mut r = vec![i.to_string(), (t + 1).to_string()];
                    r.extend(f.theta[t * d..(t + 1) * d].iter().map(|w| w.to_string()));
                    r.extend(alpha_for(t));
                    out.push(r);
                }
                if let Prediction::Survival(lp) = &f.prediction {
                    let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
                    for (j, s) in curve_from_probs(&p).iter().enumerate() {
                        curves.push(vec![i.to_string(), j.to_string(), s.to_string()]);
                    }
                }
            }
        }
    }
    Ok((header, out, curves))
}

fn cmd_explain(args: ExplainArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ed = eval_data(&ckpt, &args.data, None)?;
    let rows = parse_rows(args.rows.as_deref(), ed.data.len())?;
    let (header, table, curves) = explanation_rows(&ckpt.model, &ed.data, rows, &ckpt.attribute_names)?;
    create_out(&args.data.out)?;
    let mut w = csv::Writer::from_path(args.data.out.join("explanations.csv")).map_err(CenError::from)?;
    w.write_record(&header).map_err(CenError::from)?;
    for r in &table {
        w.write_record(r).map_err(CenError::from)?;
    }
    w.flush()?;
    if matches!(ckpt.model.family, Family::Survival { .. }) {
        let mut w = csv::Writer::from_path(args.data.out.join("survival_curves.csv")).map_err(CenError::from)?;
        w.write_record(["instance", "interval", "survival"]).map_err(CenError::from)?;
        for r in &curves {
            w.write_record(r).map_err(CenError::from)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn read_overrides<T: Serialize + serde::de::DeserializeOwned>(base: T, path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else { return Ok(base) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let over: serde_json::Value = serde_json::from_str(&text).map_err(|e| usage(e.to_string()))?;
    let mut value = serde_json::to_value(base).map_err(CenError::from)?;
    merge(&mut value, over);
    serde_json::from_value(value).map_err(|e| usage(e.to_string()))
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn reseed(seeds: &mut Vec<u64>, first: Option<u64>) {
    if let Some(s) = first {
        let n = seeds.len() as u64;
        *seeds = (s..s + n).collect();
    }
}

fn cmd_experiment(args: ExperimentArgs) -> CliResult<()> {
    if !EXPERIMENTS.contains(&args.name.as_str()) {
        return Err(usage(format!(
            "unknown experiment {:?}; valid names: {}",
            args.name,
            EXPERIMENTS.join(", ")
        )));
    }
    let cfg_path = args.config.as_deref();
    let threads = exp::thread_budget();
    let results = args.out.join("results.csv");
    macro_rules! sweep {
        ($cfg:expr, $run:expr) => {{
            let mut cfg = read_overrides($cfg, cfg_path)?;
            reseed(&mut cfg.seeds, args.seed);
            let rows = $run(&cfg, threads)?;
            create_out(&args.out)?;
            write_csv(&rows, BufWriter::new(File::create(&results)?))?;
        }};
    }
    match args.name.as_str() {
        "dict-size" => sweep!(exp::DictSizeConfig::default(), exp::dict_size),
        "sample-efficiency" => sweep!(exp::SampleEfficiencyConfig::default(), exp::sample_efficiency),
        "noisy-features" => sweep!(exp::ConsistencyConfig::noisy(), exp::consistency),
        "incomplete-features" => sweep!(exp::ConsistencyConfig::incomplete(), exp::consistency),
        "entropy-reg" => sweep!(exp::EntropyRegConfig::default(), exp::entropy_reg),
        "fano" => {
            let mut cfg = read_overrides(exp::EntropyRegConfig::default(), cfg_path)?;
            reseed(&mut cfg.seeds, args.seed);
            let out = exp::fano(&cfg, threads)?;
            let (rows, reports): (Vec<_>, Vec<_>) = out.into_iter().unzip();
            create_out(&args.out)?;
            write_csv(&rows, BufWriter::new(File::create(&results)?))?;
            write_json(&args.out.join("fano.json"), &reports)?;
        }
        "lime-recovery" => {
            let mut cfg = read_overrides(exp::LimeRecoveryConfig::default(), cfg_path)?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            let rows = exp::lime_recovery(&cfg, threads)?;
            create_out(&args.out)?;
            write_csv(&rows, BufWriter::new(File::create(&results)?))?;
        }
        _ => unreachable!("name checked above"),
    }
    Ok(())
}
