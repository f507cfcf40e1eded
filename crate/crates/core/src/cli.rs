//! Command-line front end.
//!
//! Every subcommand writes `manifest_<command>.txt` into the output
//! directory. The manifest is itself a valid `--config` file, so a run can be
//! repeated with `fuelage <command> --config out/manifest_<command>.txt`.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;

use crate::age::{
    apply_coeff, extract_model_coeff_curve, fit_log_coeff, seymour_coeff, AgeCoeffModel, AgeCurve,
    AgePredictor, CoeffCurve, CorrectedBaseline, SeymourBaseline, SeymourCurve,
};
use crate::domain::{Dataset, FlightSample};
use crate::error::{Error, Result};
use crate::evaluation::{consumption_table, evaluate, metrics_by_age, write_consumption_csv};
use crate::ingest::{
    parse_qar_csv, preprocess, temporal_split, write_qar_csv, SavGolConfig, SplitConfig, SplitMode,
    SplitSide,
};
use crate::kv::KvFile;
use crate::neural::{Activation, MlpArch, MlpCheckpoint, Variant};
use crate::physics::{ParametricCoeffs, PhysicsBaseline};
use crate::plot::{line_chart, Series};
use crate::projection::{project, projection_report, FleetSpec, Projection, ReferenceCurve};
use crate::synthgen::{generate_fleet, SynthConfig};
use crate::trainer::{train, write_train_log, TrainConfig};

#[derive(Parser, Debug, Serialize)]
#[command(name = "fuelage", version, about = "Fuel-flow models with engine ageing corrections")]
pub struct Cli {
    /// Seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Single-threaded execution.
    #[arg(
        long,
        global = true,
        action = ArgAction::Set,
        num_args = 0..=1,
        require_equals = true,
        default_value_t = false,
        default_missing_value = "true"
    )]
    pub deterministic: bool,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Flat `key = value` file; keys are flag names with `_` for `-`.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic fleet with a planted ageing law.
    Gen(GenArgs),
    /// Smooth signals, derive acceleration and split by date.
    Prep(PrepArgs),
    /// Physics baseline prediction per sample.
    Baseline(BaselineArgs),
    /// Fit the log-age coefficient against baseline predictions.
    Calibrate(CalibrateArgs),
    /// Train a neural fuel-flow model.
    Train(TrainArgs),
    /// Metrics, age-binned errors and consumption totals.
    Eval(EvalArgs),
    /// Extract a model's age-correction curve.
    Curve(CurveArgs),
    /// Project cumulative fleet fuel against a reference curve.
    Project(ProjectArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Prep(_) => "prep",
            Command::Baseline(_) => "baseline",
            Command::Calibrate(_) => "calibrate",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Curve(_) => "curve",
            Command::Project(_) => "project",
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = SynthConfig::default().n_tails)]
    pub n_tails: usize,
    #[arg(long, default_value_t = SynthConfig::default().age_range.0)]
    pub age_min: f64,
    #[arg(long, default_value_t = SynthConfig::default().age_range.1)]
    pub age_max: f64,
    #[arg(long, default_value_t = SynthConfig::default().flights_per_tail)]
    pub flights_per_tail: usize,
    #[arg(long, default_value_t = SynthConfig::default().a_true)]
    pub a_true: f64,
    #[arg(long, default_value_t = SynthConfig::default().tail_bias_sd)]
    pub tail_bias_sd: f64,
    #[arg(long, default_value_t = SynthConfig::default().noise_sd)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = SynthConfig::default().calendar_span_days)]
    pub calendar_span_days: u32,
    /// Physics coefficient file; built-in defaults otherwise.
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    /// Defaults to `<out-dir>/fleet.csv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct PrepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = SavGolConfig::default().window_len)]
    pub window_len: usize,
    #[arg(long, default_value_t = SavGolConfig::default().poly_order)]
    pub poly_order: usize,
    #[arg(long, default_value_t = SplitConfig::default().train_fraction)]
    pub train_fraction: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct BaselineArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    /// Defaults to `<out-dir>/baseline_pred.csv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct CalibrateArgs {
    /// Recorder CSV with observed fuel flow.
    #[arg(long)]
    pub obs: PathBuf,
    /// Baseline predictions for the same samples.
    #[arg(long)]
    pub pred: PathBuf,
    /// Defaults to `<out-dir>/age_coeff.txt`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "inductive_bias")]
    pub variant: Variant,
    #[arg(long, default_value_t = MlpArch::default().n_hidden_layers)]
    pub hidden_layers: usize,
    #[arg(long, default_value_t = MlpArch::default().units)]
    pub units: usize,
    #[arg(long, default_value_t = MlpArch::default().l2_lambda)]
    pub l2_lambda: f64,
    #[arg(long, default_value_t = MlpArch::default().dropout_rate)]
    pub dropout_rate: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().base_lr)]
    pub base_lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().warmup_frac)]
    pub warmup_frac: f64,
    #[arg(long, default_value_t = TrainConfig::default().adam_beta1)]
    pub adam_beta1: f64,
    #[arg(long, default_value_t = TrainConfig::default().adam_beta2)]
    pub adam_beta2: f64,
    #[arg(long, default_value_t = TrainConfig::default().adam_eps)]
    pub adam_eps: f64,
    #[arg(long, default_value_t = TrainConfig::default().weight_decay)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = TrainConfig::default().val_fraction)]
    pub val_fraction: f64,
    /// Defaults to `<out-dir>/checkpoint.json`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Model references, `[name=]ref`, comma separated or repeated.
    /// Refs: `baseline`, `seymour`, `coeff:<file>`, `ckpt:<file>`, `pred:<file>`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub model: Vec<String>,
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub bin_width: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct CurveArgs {
    /// `baseline`, `seymour`, `coeff:<file>` or `ckpt:<file>`, optionally `name=`-prefixed.
    #[arg(long)]
    pub model: String,
    /// Samples whose age is swept.
    #[arg(long)]
    pub probe: PathBuf,
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    /// Evenly spaced subset of the probe file to use.
    #[arg(long, default_value_t = 2000)]
    pub max_probes: usize,
    #[arg(long, default_value_t = 25.0)]
    pub grid_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub grid_step: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct ProjectArgs {
    /// Curves to project: `baseline`, `seymour`, `coeff:<file>`, `curve:<csv>`
    /// or `ckpt:<file>` (needs `--probe`).
    #[arg(long, value_delimiter = ',', required = true)]
    pub model: Vec<String>,
    #[arg(long)]
    pub probe: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub max_probes: usize,
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    /// Fleet spec file with `ages`, `annual_base_fuel`, `horizon`.
    #[arg(long)]
    pub fleet: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub ages: Option<Vec<f64>>,
    #[arg(long)]
    pub annual_base_fuel: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = ReferenceCurve::default().a_ref)]
    pub a_ref: f64,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match inject_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if cli.deterministic {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Appends `--key=value` for every config entry not already given on the
/// command line.
fn inject_config(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--config" {
            path = strs.get(i + 1).cloned();
        }
    }
    let Some(path) = path else { return Ok(args) };
    let kv = KvFile::read(Path::new(&path))
        .map_err(|e| Error::Config(format!("cannot load config {path}: {e}")))?;
    let given: Vec<&str> = strs
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a))
        .collect();
    let subcommand = strs.iter().skip(1).find(|a| !a.starts_with('-'));
    for (k, v) in kv.iter() {
        if k == "command" {
            if subcommand.is_some_and(|s| s != v) {
                return Err(Error::Config(format!(
                    "config was written for `{v}`, not `{}`",
                    subcommand.map(String::as_str).unwrap_or("")
                )));
            }
            continue;
        }
        let flag = k.replace('_', "-");
        if flag == "config" || given.contains(&flag.as_str()) {
            continue;
        }
        args.push(format!("--{flag}={v}").into());
    }
    Ok(args)
}

fn execute(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out_dir).map_err(|e| Error::io(&cli.out_dir, e))?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, a)?,
        Command::Prep(a) => cmd_prep(cli, a)?,
        Command::Baseline(a) => cmd_baseline(cli, a)?,
        Command::Calibrate(a) => cmd_calibrate(cli, a)?,
        Command::Train(a) => cmd_train(cli, a)?,
        Command::Eval(a) => cmd_eval(cli, a)?,
        Command::Curve(a) => cmd_curve(cli, a)?,
        Command::Project(a) => cmd_project(cli, a)?,
    }
    write_manifest(cli)
}

/// Flattens the parsed command line into `key = value` lines.
fn manifest(cli: &Cli) -> Result<KvFile> {
    let value = serde_json::to_value(cli)?;
    let mut kv = KvFile::default();
    let flat = |kv: &mut KvFile, obj: &serde_json::Map<String, serde_json::Value>| {
        for (k, v) in obj {
            let text = match v {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|i| i.as_str().map(str::to_string).unwrap_or_else(|| i.to_string()))
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            kv.insert(k.clone(), text);
        }
    };
    if let serde_json::Value::Object(top) = &value {
        for (k, v) in top {
            match (k.as_str(), v) {
                ("command", serde_json::Value::Object(cmd)) => {
                    for (name, args) in cmd {
                        kv.insert("command", name);
                        if let serde_json::Value::Object(a) = args {
                            flat(&mut kv, a);
                        }
                    }
                }
                _ => {
                    let mut single = serde_json::Map::new();
                    single.insert(k.clone(), v.clone());
                    flat(&mut kv, &single);
                }
            }
        }
    }
    Ok(kv)
}

fn write_manifest(cli: &Cli) -> Result<()> {
    let path = cli.out_dir.join(format!("manifest_{}.txt", cli.command.name()));
    manifest(cli)?.write(&path)
}

fn out_path(cli: &Cli, given: &Option<PathBuf>, default: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| cli.out_dir.join(default))
}

fn load_coeffs(path: &Option<PathBuf>) -> Result<ParametricCoeffs> {
    match path {
        Some(p) => ParametricCoeffs::load(p),
        None => Ok(ParametricCoeffs::default()),
    }
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let parsed = parse_qar_csv(path)?;
    if parsed.rejected > 0 {
        log::warn!("{}: {} rows rejected", path.display(), parsed.rejected);
    }
    Ok(parsed.dataset)
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_tails: a.n_tails,
        age_range: (a.age_min, a.age_max),
        flights_per_tail: a.flights_per_tail,
        seed: cli.seed,
        a_true: a.a_true,
        tail_bias_sd: a.tail_bias_sd,
        noise_sd: a.noise_sd,
        calendar_span_days: a.calendar_span_days,
        coeffs: load_coeffs(&a.coeffs)?,
    };
    let ds = generate_fleet(&cfg)?;
    let path = out_path(cli, &a.output, "fleet.csv");
    write_qar_csv(&path, &ds)?;
    println!("wrote {} samples to {}", ds.len(), path.display());
    Ok(())
}

fn cmd_prep(cli: &Cli, a: &PrepArgs) -> Result<()> {
    let ds = read_dataset(&a.input)?;
    let sg = SavGolConfig {
        window_len: a.window_len,
        poly_order: a.poly_order,
    };
    let prepped = preprocess(&ds, &sg)?;
    let split = temporal_split(
        &prepped.dataset,
        &SplitConfig {
            split_mode: SplitMode::ByDateFraction,
            train_fraction: a.train_fraction,
        },
    )?;
    write_qar_csv(&cli.out_dir.join("prepped.csv"), &prepped.dataset)?;
    write_qar_csv(&cli.out_dir.join("train.csv"), &split.train)?;
    write_qar_csv(&cli.out_dir.join("test.csv"), &split.test)?;
    let mut out = String::from("tail_id,flight_id,date,side\n");
    for (key, date, side) in &split.assignment {
        let side = match side {
            SplitSide::Train => "train",
            SplitSide::Test => "test",
        };
        out.push_str(&format!("{},{},{date},{side}\n", key.tail_id, key.flight_id));
    }
    let p = cli.out_dir.join("split.csv");
    fs::write(&p, out).map_err(|e| Error::io(&p, e))?;
    println!(
        "prepped {} samples ({} flights dropped); train {} / test {}",
        prepped.dataset.len(),
        prepped.dropped_flights.len(),
        split.train.len(),
        split.test.len()
    );
    Ok(())
}

/// `(tail, flight, t)` key with the timestamp compared bit for bit.
type SampleKey = (String, String, u64);

fn sample_key(s: &FlightSample) -> SampleKey {
    (s.tail_id.clone(), s.flight_id.clone(), s.t.to_bits())
}

fn write_predictions(path: &Path, samples: &[FlightSample], preds: &[f64]) -> Result<()> {
    let mut out = String::from("tail_id,flight_id,t_s,pred_kgh\n");
    for (s, p) in samples.iter().zip(preds) {
        out.push_str(&format!("{},{},{},{}\n", s.tail_id, s.flight_id, s.t, p));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_predictions(path: &Path) -> Result<HashMap<SampleKey, f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (ti, fi, si, pi) = (col("tail_id")?, col("flight_id")?, col("t_s")?, col("pred_kgh")?);
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize, name: &str| -> Result<f64> {
            let v = rec.get(i).unwrap_or("").trim();
            v.parse().map_err(|_| Error::Parse {
                line,
                column: name.into(),
                value: v.into(),
            })
        };
        let t = num(si, "t_s")?;
        let p = num(pi, "pred_kgh")?;
        let key = (rec[ti].to_string(), rec[fi].to_string(), t.to_bits());
        if out.insert(key, p).is_some() {
            return Err(Error::Data(format!("{}: duplicate prediction at line {line}", path.display())));
        }
    }
    Ok(out)
}

fn align_predictions(path: &Path, samples: &[FlightSample]) -> Result<Vec<f64>> {
    let table = read_predictions(path)?;
    samples
        .iter()
        .map(|s| {
            table.get(&sample_key(s)).copied().ok_or_else(|| {
                Error::Data(format!(
                    "{}: no prediction for {}/{} at t = {}",
                    path.display(),
                    s.tail_id,
                    s.flight_id,
                    s.t
                ))
            })
        })
        .collect()
}

fn cmd_baseline(cli: &Cli, a: &BaselineArgs) -> Result<()> {
    let ds = read_dataset(&a.input)?;
    let pb = PhysicsBaseline::new(load_coeffs(&a.coeffs)?);
    let preds = pb.predict_all(&ds.samples)?;
    let path = out_path(cli, &a.output, "baseline_pred.csv");
    write_predictions(&path, &ds.samples, &preds)?;
    println!("wrote {} baseline predictions to {}", preds.len(), path.display());
    Ok(())
}

fn cmd_calibrate(cli: &Cli, a: &CalibrateArgs) -> Result<()> {
    let ds = read_dataset(&a.obs)?;
    let preds = align_predictions(&a.pred, &ds.samples)?;
    let model = fit_log_coeff(&ds.targets()?, &preds, &ds.ages())?;
    let path = out_path(cli, &a.output, "age_coeff.txt");
    model.save(&path)?;
    println!("a = {:.10}", model.a);
    println!("{:>5}  {:>10}  {:>10}", "age", "calibrated", "seymour");
    for age in [0.0, 5.0, 10.0, 15.0, 20.0, 25.0] {
        println!(
            "{age:>5}  {:>10.5}  {:>10.5}",
            model.coeff(age),
            seymour_coeff(age)?
        );
    }
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let ds = read_dataset(&a.input)?;
    let arch = MlpArch {
        n_hidden_layers: a.hidden_layers,
        units: a.units,
        activation: Activation::Relu,
        l2_lambda: a.l2_lambda,
        dropout_rate: a.dropout_rate,
        variant: a.variant,
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        base_lr: a.base_lr,
        warmup_frac: a.warmup_frac,
        adam_beta1: a.adam_beta1,
        adam_beta2: a.adam_beta2,
        adam_eps: a.adam_eps,
        weight_decay: a.weight_decay,
        seed: cli.seed,
        val_fraction: a.val_fraction,
    };
    let out = train(&arch, &ds, &cfg)?;
    let path = out_path(cli, &a.output, "checkpoint.json");
    out.checkpoint.save(&path)?;
    write_train_log(&cli.out_dir.join("train_log.csv"), &out.log)?;
    let meta = &out.checkpoint.train_meta;
    println!(
        "best epoch {} of {}, validation loss {:.6}",
        meta.best_epoch,
        meta.epochs_run,
        meta.best_val_loss.unwrap_or(f64::NAN)
    );
    if let Some(a) = out.checkpoint.age_coeff() {
        println!("a = {a:.10}");
    }
    if let Some(epoch) = out.diverged_at {
        return Err(Error::Numeric(format!(
            "training diverged in epoch {epoch}; best checkpoint from epoch {} saved",
            meta.best_epoch
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum ModelRef {
    Baseline,
    Seymour,
    Coeff(PathBuf),
    Ckpt(PathBuf),
    Pred(PathBuf),
    Curve(PathBuf),
}

fn parse_model(spec: &str) -> Result<(String, ModelRef)> {
    let (name, r) = match spec.split_once('=') {
        Some((n, r)) => (Some(n.trim().to_string()), r.trim()),
        None => (None, spec.trim()),
    };
    let file = |p: &str| PathBuf::from(p);
    let model = match r.split_once(':') {
        None if r == "baseline" || r == "blind" => ModelRef::Baseline,
        None if r == "seymour" => ModelRef::Seymour,
        Some(("coeff", p)) => ModelRef::Coeff(file(p)),
        Some(("ckpt", p)) => ModelRef::Ckpt(file(p)),
        Some(("pred", p)) => ModelRef::Pred(file(p)),
        Some(("curve", p)) => ModelRef::Curve(file(p)),
        _ => return Err(Error::Config(format!("unrecognised model reference `{spec}`"))),
    };
    let name = name.unwrap_or_else(|| match &model {
        ModelRef::Baseline => "baseline".into(),
        ModelRef::Seymour => "seymour".into(),
        ModelRef::Coeff(p) | ModelRef::Ckpt(p) | ModelRef::Pred(p) | ModelRef::Curve(p) => p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into()),
    });
    if name.is_empty() || name.contains(['/', '\\', ',']) {
        return Err(Error::Config(format!("invalid model name `{name}`")));
    }
    Ok((name, model))
}

fn model_predictions(model: &ModelRef, ds: &Dataset, coeffs: &ParametricCoeffs) -> Result<Vec<f64>> {
    let pb = PhysicsBaseline::new(*coeffs);
    match model {
        ModelRef::Baseline => pb.predict_all(&ds.samples),
        ModelRef::Seymour => pb
            .predict_all(&ds.samples)?
            .into_iter()
            .zip(&ds.samples)
            .map(|(b, s)| Ok(b * seymour_coeff(s.age)?))
            .collect(),
        ModelRef::Coeff(p) => {
            let m = AgeCoeffModel::load(p)?;
            Ok(pb
                .predict_all(&ds.samples)?
                .into_iter()
                .zip(&ds.samples)
                .map(|(b, s)| apply_coeff(b, s.age, &m))
                .collect())
        }
        ModelRef::Ckpt(p) => MlpCheckpoint::load(p)?.predict_all(&ds.samples),
        ModelRef::Pred(p) => align_predictions(p, &ds.samples),
        ModelRef::Curve(_) => Err(Error::Config("a curve file cannot produce predictions".into())),
    }
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let ds = read_dataset(&a.input)?;
    let coeffs = load_coeffs(&a.coeffs)?;
    let models = a.model.iter().map(|m| parse_model(m)).collect::<Result<Vec<_>>>()?;
    let mut named = Vec::with_capacity(models.len());
    println!(
        "{:<16} {:>10} {:>8} {:>10} {:>12} {:>8}",
        "model", "mae_kgh", "mape_%", "me_kgh", "mse", "bias_%"
    );
    for (name, m) in &models {
        let preds = model_predictions(m, &ds, &coeffs)?;
        let mut report = evaluate(name, &preds, &ds)?;
        report.per_age_bin = metrics_by_age(&preds, &ds.samples, a.bin_width)?;
        let json = cli.out_dir.join(format!("eval_{name}.json"));
        fs::write(&json, report.to_json()?).map_err(|e| Error::io(&json, e))?;
        report.write_csv(&cli.out_dir.join(format!("eval_{name}.csv")))?;
        let o = &report.overall;
        println!(
            "{name:<16} {:>10.3} {:>8.3} {:>10.3} {:>12.3} {:>8.3}",
            o.mae,
            o.mape.unwrap_or(f64::NAN) * 100.0,
            o.me,
            o.mse,
            o.bias_ratio * 100.0
        );
        named.push((name.clone(), preds));
    }
    let table = consumption_table(&named, &ds)?;
    write_consumption_csv(&cli.out_dir.join("consumption.csv"), &table)?;
    for r in &table {
        println!(
            "{:<16} {:>12.3} t  diff {:>10.3} t  ({:+.2}%)",
            r.model,
            r.consumption_t,
            r.difference_t,
            r.difference_ratio * 100.0
        );
    }
    Ok(())
}

fn probe_subset(ds: &Dataset, max: usize) -> Result<Vec<FlightSample>> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if max == 0 {
        return Err(Error::Config("max_probes must be ≥ 1".into()));
    }
    let n = ds.len();
    let take = max.min(n);
    Ok((0..take).map(|i| ds.samples[i * n / take].clone()).collect())
}

fn age_grid(max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(max >= 25.0) {
        return Err(Error::Config("grid must reach at least 25 years with a positive step".into()));
    }
    let n = (max / step).round() as usize;
    Ok((0..=n).map(|i| i as f64 * step).collect())
}

fn extract_curve(model: &ModelRef, probes: &[FlightSample], grid: &[f64], coeffs: &ParametricCoeffs) -> Result<CoeffCurve> {
    let baseline = PhysicsBaseline::new(*coeffs);
    match model {
        ModelRef::Baseline => extract_model_coeff_curve(&baseline, probes, grid),
        ModelRef::Seymour => extract_model_coeff_curve(&SeymourBaseline { baseline }, probes, grid),
        ModelRef::Coeff(p) => {
            let model = AgeCoeffModel::load(p)?;
            extract_model_coeff_curve(&CorrectedBaseline { baseline, model }, probes, grid)
        }
        ModelRef::Ckpt(p) => {
            let ck = MlpCheckpoint::load(p)?;
            extract_model_coeff_curve(&ck as &dyn AgePredictor, probes, grid)
        }
        ModelRef::Pred(_) | ModelRef::Curve(_) => Err(Error::Config(
            "curves need a model that accepts an age override".into(),
        )),
    }
}

fn write_curve_csv(path: &Path, curve: &CoeffCurve) -> Result<()> {
    let mut out = String::from("age,coeff\n");
    for (a, c) in curve.ages.iter().zip(&curve.coeffs) {
        out.push_str(&format!("{a},{c}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_curve_csv(path: &Path) -> Result<CoeffCurve> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let (mut ages, mut coeffs) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize, name: &str| -> Result<f64> {
            let v = rec.get(i).unwrap_or("").trim();
            v.parse().map_err(|_| Error::Parse {
                line,
                column: name.into(),
                value: v.into(),
            })
        };
        ages.push(num(0, "age")?);
        coeffs.push(num(1, "coeff")?);
    }
    CoeffCurve::new(ages, coeffs)
}

fn cmd_curve(cli: &Cli, a: &CurveArgs) -> Result<()> {
    let (name, model) = parse_model(&a.model)?;
    let probes = probe_subset(&read_dataset(&a.probe)?, a.max_probes)?;
    let grid = age_grid(a.grid_max, a.grid_step)?;
    let curve = extract_curve(&model, &probes, &grid, &load_coeffs(&a.coeffs)?)?;
    write_curve_csv(&cli.out_dir.join(format!("curve_{name}.csv")), &curve)?;
    let mut series = vec![Series {
        name: name.clone(),
        points: curve.ages.iter().copied().zip(curve.coeffs.iter().copied()).collect(),
    }];
    series.push(Series {
        name: "seymour".into(),
        points: grid
            .iter()
            .map(|&g| Ok((g, seymour_coeff(g)?)))
            .collect::<Result<_>>()?,
    });
    let svg = line_chart("Correction coefficient by aircraft age", "age (years)", "coefficient", &series);
    let p = cli.out_dir.join(format!("curve_{name}.svg"));
    fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
    for (g, c) in curve.ages.iter().zip(&curve.coeffs).step_by(5) {
        println!("age {g:>5}: {c:.6}");
    }
    Ok(())
}

fn cmd_project(cli: &Cli, a: &ProjectArgs) -> Result<()> {
    let mut fleet = match &a.fleet {
        Some(p) => FleetSpec::from_kv(&KvFile::read(p)?)?,
        None => FleetSpec::default(),
    };
    if let Some(ages) = &a.ages {
        fleet.ages = ages.clone();
    }
    if let Some(f) = a.annual_base_fuel {
        fleet.annual_base_fuel = f;
    }
    if let Some(h) = a.horizon {
        fleet.horizon = h;
    }
    fleet.validate()?;
    let reference = ReferenceCurve::new(a.a_ref)?;
    let coeffs = load_coeffs(&a.coeffs)?;
    let mut probes = None;
    let mut results = Vec::new();
    for spec in &a.model {
        let (name, model) = parse_model(spec)?;
        let curve: Box<dyn AgeCurve> = match &model {
            ModelRef::Baseline => Box::new(AgeCoeffModel::new(0.0)),
            ModelRef::Seymour => Box::new(SeymourCurve),
            ModelRef::Coeff(p) => Box::new(AgeCoeffModel::load(p)?),
            ModelRef::Curve(p) => Box::new(read_curve_csv(p)?),
            ModelRef::Ckpt(_) => {
                if probes.is_none() {
                    let p = a.probe.as_ref().ok_or_else(|| {
                        Error::Config("checkpoint models need --probe samples".into())
                    })?;
                    probes = Some(probe_subset(&read_dataset(p)?, a.max_probes)?);
                }
                let grid = age_grid(25.0, 1.0)?;
                Box::new(extract_curve(&model, probes.as_deref().unwrap_or(&[]), &grid, &coeffs)?)
            }
            ModelRef::Pred(_) => {
                return Err(Error::Config("prediction files carry no age curve".into()));
            }
        };
        let rows = project(&fleet, curve.as_ref(), &reference)?;
        results.push(Projection { model_name: name, rows });
    }
    projection_report(
        &results,
        &cli.out_dir.join("projection.csv"),
        Some(&cli.out_dir.join("projection.svg")),
    )?;
    for p in &results {
        let last = p.rows.last().map(|r| r.diff_t).unwrap_or(0.0);
        let first = p.rows.first().map(|r| r.diff_t).unwrap_or(0.0);
        println!("{:<16} year 1 diff {first:>10.2} t, year {} diff {last:>10.2} t", p.model_name, fleet.horizon);
    }
    Ok(())
}
