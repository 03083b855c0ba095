//! Argument parsing and the five subcommands.
//!
//! [`run`] is the whole program minus process plumbing: it takes the raw
//! argument list and two writers and returns the exit code. Exit codes are
//! 0 on success, 1 for invalid input or configuration, 2 for runtime and
//! numeric failures (unreadable files, non-finite loss, failed gradient check).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use hass_core::gradcheck::check_model_gradients;
use hass_core::metrics::{evaluate, mean_report, render_report, ReportRow};
use hass_core::synth::{class_histogram, generate_synthetic};
use hass_core::train::{accuracy, train_with};
use hass_core::{
    HeadKind, InputDims, MetricsReport, Model, ModelConfig, Optimizer, SleepStage, SynthSpec, TrainConfig,
};
use thiserror::Error;

use crate::config::{self, ConfigError};
use crate::dataset::{read_dataset, write_dataset, Dataset};
use crate::error::FormatError;
use crate::params_file::{read_params, save_model};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] hass_core::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("gradient check failed: max relative error {max_error:e} exceeds tolerance {tolerance:e}")]
    GradCheckFailed { max_error: f64, tolerance: f64 },
    #[error("writing output: {0}")]
    Output(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use hass_core::Error as E;
        match self {
            Self::Invalid(_) | Self::Config(_) => 1,
            Self::Core(
                E::InvalidConfig(_) | E::HeadDivisibility { .. } | E::InputMismatch { .. } | E::InvalidShape(_),
            ) => 1,
            _ => 2,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "hass", version, about = "Hybrid attention encoder for EEG sleep staging")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic HEEG1 dataset.
    Synth(SynthArgs),
    /// Train a classifier with or without the HASS encoder.
    Train(TrainArgs),
    /// Evaluate a saved model on a dataset.
    Eval(EvalArgs),
    /// Compare tape gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate paired with/without-HASS models over several seeds.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum YesNo {
    Yes,
    No,
}

impl YesNo {
    fn flag(self) -> bool {
        self == Self::Yes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Linear,
    Tinyconv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

impl OptimizerArg {
    fn build(self) -> Optimizer {
        match self {
            Self::Adam => Optimizer::adam(),
            Self::Sgd => Optimizer::Sgd,
        }
    }
}

/// Head count for both attention blocks; `auto` picks 2 where the width allows, else 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads(pub Option<usize>);

fn parse_heads(s: &str) -> Result<Heads, String> {
    if s == "auto" {
        return Ok(Heads(None));
    }
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(Heads(Some(n))),
        _ => Err(format!("expected `auto` or a positive integer, found `{s}`")),
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output HEEG1 file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub channels: usize,
    #[arg(long, default_value_t = 64)]
    pub timesteps: usize,
    /// Number of records.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Strength of the class-specific cross-channel pattern, in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub spatial: f64,
    /// Amplitude of the class-specific temporal template, in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub temporal: f64,
    /// Standard deviation of the white noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Five comma-separated class probabilities (W,N1,N2,N3,REM).
    #[arg(long, default_value = "0.2,0.2,0.2,0.2,0.2")]
    pub balance: String,
    /// Flat `key = value` file with defaults for these options.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Classifier head.
    #[arg(long, value_enum, default_value_t = HeadArg::Linear)]
    pub head: HeadArg,
    /// Attention heads per block.
    #[arg(long, value_parser = parse_heads, default_value = "auto")]
    pub heads: Heads,
    /// Tiny-conv kernel length.
    #[arg(long, default_value_t = 5)]
    pub kernel: usize,
    /// Tiny-conv filter count.
    #[arg(long, default_value_t = 8)]
    pub filters: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
}

impl ModelArgs {
    fn head_kind(&self) -> HeadKind {
        match self.head {
            HeadArg::Linear => HeadKind::Linear,
            HeadArg::Tinyconv => HeadKind::TinyConv {
                kernel: self.kernel,
                filters: self.filters,
            },
        }
    }

    fn model_config(&self, dims: InputDims, hass: bool, seed: u64) -> ModelConfig {
        let mut cfg = ModelConfig::new(dims, hass, self.head_kind(), seed);
        cfg.heads = self.heads.0;
        cfg
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            optimizer: self.optimizer.build(),
            seed,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training set (HEEG1).
    #[arg(long)]
    pub data: PathBuf,
    /// Put the HASS encoder in front of the head.
    #[arg(long, value_enum, default_value_t = YesNo::Yes)]
    pub hass: YesNo,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Seed for initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the trained model (HASSPRM).
    #[arg(long)]
    pub out_model: PathBuf,
    /// Flat `key = value` file with defaults for these options.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Records to evaluate (HEEG1).
    #[arg(long)]
    pub data: PathBuf,
    /// Trained model (HASSPRM).
    #[arg(long)]
    pub model: PathBuf,
    /// Also write the metrics as `key = value` lines to this file.
    #[arg(long)]
    pub emit_report: Option<PathBuf>,
    /// Flat `key = value` file with defaults for these options.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 4)]
    pub timesteps: usize,
    /// Attention heads per block.
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Finite-difference step.
    #[arg(long, default_value_t = hass_core::gradcheck::DEFAULT_STEP)]
    pub step: f64,
    /// Records in the checked batch.
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, value_enum, default_value_t = HeadArg::Linear)]
    pub head: HeadArg,
    /// Flat `key = value` file with defaults for these options.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Training records (HEEG1).
    #[arg(long)]
    pub data_train: PathBuf,
    /// Held-out records (HEEG1).
    #[arg(long)]
    pub data_eval: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated seeds; each trains one model per arm.
    #[arg(long, default_value = "0,1,2")]
    pub seeds: String,
    /// HASS setting of the two arms; `no,no` gives an A/A run.
    #[arg(long, default_value = "yes,no")]
    pub hass_arms: String,
    /// Also write per-seed metrics and deltas as `key = value` lines.
    #[arg(long)]
    pub emit_report: Option<PathBuf>,
    /// Flat `key = value` file with defaults for these options.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// The `clap` command with repeated flags resolved last-wins, so spliced
/// config entries can be overridden by explicit flags. `compare` shares the
/// model flags with `train` but defaults to the tiny-conv baseline.
pub fn command() -> clap::Command {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_owned()).collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |s| s.args_override_self(true));
    }
    cmd.mut_subcommand("compare", |s| s.mut_arg("head", |a| a.default_value("tinyconv")))
}

fn option_names(cmd: &clap::Command, sub: &str) -> Vec<String> {
    cmd.find_subcommand(sub)
        .map(|s| {
            s.get_arguments()
                .filter_map(|a| a.get_long())
                .filter(|l| *l != "config" && *l != "help")
                .map(str::to_owned)
                .collect()
        })
        .unwrap_or_default()
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run(args: Vec<OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut cmd = command();
    let args = match with_config_entries(&cmd, args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };
    let matches = match cmd.try_get_matches_from_mut(&args) {
        Ok(m) => m,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
                return 1;
            }
            let _ = write!(out, "{text}");
            return 0;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return 1;
        }
    };
    let result = echo_config(&cmd, &matches, out).and_then(|_| dispatch(cli.command, out));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn with_config_entries(cmd: &clap::Command, args: Vec<OsString>) -> Result<Vec<OsString>, ConfigError> {
    let Some(path) = config::find_config_flag(&args) else {
        return Ok(args);
    };
    let Some((index, sub)) = args
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| !a.to_string_lossy().starts_with('-'))
        .map(|(i, a)| (i, a.to_string_lossy().into_owned()))
    else {
        return Ok(args);
    };
    if cmd.find_subcommand(&sub).is_none() {
        return Ok(args);
    }
    let entries = config::load_config(Path::new(&path))?;
    config::splice_entries(&args, index, &entries, &option_names(cmd, &sub), &sub)
}

/// Prints every resolved option as a `key = value` line, usable as a config file.
fn echo_config(cmd: &clap::Command, matches: &ArgMatches, out: &mut dyn Write) -> CliResult {
    let Some((name, sub)) = matches.subcommand() else {
        return Ok(());
    };
    let Some(spec) = cmd.find_subcommand(name) else {
        return Ok(());
    };
    writeln!(out, "# {name}: resolved configuration")?;
    for arg in spec.get_arguments() {
        let (id, Some(long)) = (arg.get_id().as_str(), arg.get_long()) else {
            continue;
        };
        if long == "help" || long == "config" {
            continue;
        }
        if let Some(values) = sub.get_raw(id) {
            let joined: Vec<String> = values.map(|v| v.to_string_lossy().into_owned()).collect();
            writeln!(out, "{long} = {}", joined.join(","))?;
        }
    }
    Ok(())
}

fn dispatch(command: Command, out: &mut dyn Write) -> CliResult {
    match command {
        Command::Synth(a) => synth(&a, out),
        Command::Train(a) => train(&a, out),
        Command::Eval(a) => eval(&a, out),
        Command::Gradcheck(a) => gradcheck(&a, out),
        Command::Compare(a) => compare(&a, out),
    }
}

fn parse_balance(text: &str) -> CliResult<[f64; SleepStage::COUNT]> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != SleepStage::COUNT {
        return Err(CliError::Invalid(format!(
            "--balance needs {} comma-separated values, found {}",
            SleepStage::COUNT,
            parts.len()
        )));
    }
    let mut out = [0.0; SleepStage::COUNT];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = p
            .parse()
            .map_err(|_| CliError::Invalid(format!("--balance: `{p}` is not a number")))?;
    }
    Ok(out)
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> CliResult<Vec<T>> {
    let items = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Invalid(format!("--{flag}: cannot parse `{}`", s.trim())))
        })
        .collect::<CliResult<Vec<T>>>()?;
    if items.is_empty() {
        return Err(CliError::Invalid(format!("--{flag} needs at least one value")));
    }
    Ok(items)
}

fn histogram_line(records: &[hass_core::EpochRecord]) -> String {
    let h = class_histogram(records);
    let parts: Vec<String> = SleepStage::ALL
        .iter()
        .map(|s| format!("{s}:{}", h[s.index()]))
        .collect();
    parts.join(" ")
}

pub fn synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult {
    if a.count == 0 {
        return Err(CliError::Invalid("--count must be at least 1".into()));
    }
    let spec = SynthSpec {
        class_balance: parse_balance(&a.balance)?,
        spatial_coupling: a.spatial,
        temporal_signature: a.temporal,
        noise_std: a.noise,
        ..SynthSpec::new(a.channels, a.timesteps, a.count, a.seed)
    };
    let records = generate_synthetic(&spec)?;
    let data = Dataset::new(records)?;
    write_dataset(&data, &a.out)?;
    writeln!(
        out,
        "wrote {} records ({}x{}) to {}",
        data.len(),
        a.channels,
        a.timesteps,
        a.out.display()
    )?;
    writeln!(out, "histogram: {}", histogram_line(&data.records))?;
    Ok(())
}

fn load_data(path: &Path) -> CliResult<Dataset> {
    Ok(read_dataset(path)?)
}

fn dims_of(data: &Dataset) -> CliResult<InputDims> {
    Ok(InputDims::new(data.channels, data.timesteps, 1)?)
}

fn fit(model: &mut Model, data: &Dataset, cfg: &TrainConfig, label: &str, out: &mut dyn Write) -> CliResult {
    let mut lines = String::new();
    let result = train_with(model, &data.records, cfg, |s| {
        let _ = writeln!(
            lines,
            "{label}epoch {:>3}  loss {:.6}  accuracy {:.4}",
            s.epoch + 1,
            s.loss,
            s.accuracy
        );
    });
    out.write_all(lines.as_bytes())?;
    result?;
    Ok(())
}

pub fn train(a: &TrainArgs, out: &mut dyn Write) -> CliResult {
    let data = load_data(&a.data)?;
    let cfg = a.model.model_config(dims_of(&data)?, a.hass.flag(), a.seed);
    let mut model = Model::init(&cfg)?;
    let tcfg = a.model.train_config(a.seed);
    tcfg.validate()?;
    writeln!(
        out,
        "model {} with {} parameters, {} records",
        hass_core::model::variant_name(&model),
        model.param_count(),
        data.len()
    )?;
    fit(&mut model, &data, &tcfg, "", out)?;
    writeln!(out, "final train accuracy {:.4}", accuracy(&model, &data.records)?)?;
    save_model(&model, &a.out_model)?;
    writeln!(out, "saved model to {}", a.out_model.display())?;
    Ok(())
}

fn score(model: &Model, data: &Dataset) -> CliResult<MetricsReport> {
    if let Some(r) = data.records.first() {
        model.dims.check(&r.signal)?;
    }
    let preds = model.predict(&data.records)?;
    let truth: Vec<SleepStage> = data.records.iter().map(|r| r.label).collect();
    Ok(evaluate(&truth, &preds)?)
}

pub fn eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let model = Model::from_named(read_params(&a.model)?)?;
    let data = load_data(&a.data)?;
    let report = score(&model, &data)?;
    let row = ReportRow {
        model: model.head.kind().name().to_owned(),
        hass: model.uses_hass(),
        report: report.clone(),
    };
    writeln!(out, "evaluated {} records", report.n_epochs)?;
    out.write_all(render_report(&[row]).as_bytes())?;
    if let Some(path) = &a.emit_report {
        std::fs::write(path, report.to_key_values("eval")).map_err(|e| FormatError::io(path, e))?;
        writeln!(out, "report written to {}", path.display())?;
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> CliResult {
    if a.batch == 0 {
        return Err(CliError::Invalid("--batch must be at least 1".into()));
    }
    if !(a.step > 0.0 && a.step.is_finite()) {
        return Err(CliError::Invalid("--step must be positive".into()));
    }
    let dims = InputDims::new(a.channels, a.timesteps, 1)?;
    let head = match a.head {
        HeadArg::Linear => HeadKind::Linear,
        HeadArg::Tinyconv => HeadKind::TinyConv {
            kernel: a.timesteps.min(5),
            filters: 8,
        },
    };
    let mut cfg = ModelConfig::new(dims, true, head, a.seed);
    cfg.heads = Some(a.heads);
    let model = Model::init(&cfg)?;
    let records = generate_synthetic(&SynthSpec::new(a.channels, a.timesteps, a.batch, a.seed))?;
    let report = check_model_gradients(&model, &records, a.step)?;
    for t in &report.tensors {
        writeln!(
            out,
            "{:<24} {:>6} coords  max error {:.3e}",
            t.name, t.coordinates, t.max_error
        )?;
    }
    writeln!(
        out,
        "max relative error {:.6e} at {}[{}] over {} coordinates",
        report.max_error, report.worst.0, report.worst.1, report.coordinates
    )?;
    if report.passes(a.tolerance) {
        writeln!(out, "PASS (tolerance {:e})", a.tolerance)?;
        Ok(())
    } else {
        writeln!(out, "FAIL (tolerance {:e})", a.tolerance)?;
        Err(CliError::GradCheckFailed {
            max_error: report.max_error,
            tolerance: a.tolerance,
        })
    }
}

/// Per-seed results of one compare run.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub arms: [MetricsReport; 2],
}

impl SeedResult {
    pub fn delta(&self) -> f64 {
        self.arms[0].overall_f1 - self.arms[1].overall_f1
    }
}

fn yes_no(flag: bool) -> &'static str {
    if flag {
        "yes"
    } else {
        "no"
    }
}

pub fn compare(a: &CompareArgs, out: &mut dyn Write) -> CliResult {
    let seeds: Vec<u64> = parse_list("seeds", &a.seeds)?;
    let arms: Vec<YesNo> = a
        .hass_arms
        .split(',')
        .map(|s| {
            YesNo::from_str(s.trim(), true).map_err(|_| CliError::Invalid(format!("--hass-arms: `{s}` is not yes/no")))
        })
        .collect::<CliResult<_>>()?;
    let [first, second] = arms[..] else {
        return Err(CliError::Invalid("--hass-arms needs exactly two values".into()));
    };
    let arms = [first.flag(), second.flag()];

    let train_set = load_data(&a.data_train)?;
    let eval_set = load_data(&a.data_eval)?;
    let dims = dims_of(&train_set)?;
    if (eval_set.channels, eval_set.timesteps) != (train_set.channels, train_set.timesteps) {
        return Err(hass_core::Error::InputMismatch {
            expected: dims.shape(),
            found: dims_of(&eval_set)?.shape(),
        }
        .into());
    }

    let mut results = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let mut reports = Vec::with_capacity(2);
        for (i, &hass) in arms.iter().enumerate() {
            let mut model = Model::init(&a.model.model_config(dims, hass, seed))?;
            let tcfg = a.model.train_config(seed);
            tcfg.validate()?;
            let label = format!("seed {seed} arm {} hass {}  ", i + 1, yes_no(hass));
            fit(&mut model, &train_set, &tcfg, &label, out)?;
            let report = score(&model, &eval_set)?;
            writeln!(
                out,
                "{label}eval macro-F1 {:.4}  accuracy {:.4}",
                report.overall_f1, report.accuracy
            )?;
            reports.push(report);
        }
        let arms: [MetricsReport; 2] = reports.try_into().expect("two arms");
        results.push(SeedResult { seed, arms });
    }

    let head = a.model.head_kind().name().to_owned();
    let mut rows = Vec::with_capacity(2);
    for (i, &hass) in arms.iter().enumerate() {
        let per_seed: Vec<MetricsReport> = results.iter().map(|r| r.arms[i].clone()).collect();
        rows.push(ReportRow {
            model: head.clone(),
            hass,
            report: mean_report(&per_seed)?,
        });
    }
    writeln!(
        out,
        "mean over {} seed(s), evaluated on {} records",
        seeds.len(),
        eval_set.len()
    )?;
    out.write_all(render_report(&rows).as_bytes())?;

    let label = format!("macro-F1 delta (hass {} - hass {})", yes_no(arms[0]), yes_no(arms[1]));
    for r in &results {
        writeln!(out, "seed {}: {label} = {:+.3}", r.seed, r.delta())?;
    }
    let mean = results.iter().map(SeedResult::delta).sum::<f64>() / results.len() as f64;
    writeln!(out, "mean {label} = {mean:+.3}")?;

    if let Some(path) = &a.emit_report {
        let mut kv = String::new();
        for r in &results {
            for (i, &hass) in arms.iter().enumerate() {
                kv.push_str(&r.arms[i].to_key_values(&format!("compare.seed{}.arm{}.{}", r.seed, i + 1, yes_no(hass))));
            }
            let _ = writeln!(kv, "compare.seed{}.delta_f1 = {}", r.seed, r.delta());
        }
        let _ = writeln!(kv, "compare.mean_delta_f1 = {mean}");
        std::fs::write(path, kv).map_err(|e| FormatError::io(path, e))?;
        writeln!(out, "report written to {}", path.display())?;
    }
    Ok(())
}
