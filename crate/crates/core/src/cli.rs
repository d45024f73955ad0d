//! Command-line front end. Each subcommand is also exposed as a function so
//! it can be driven without spawning a process.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::can_log::{filter_by_aid, parse_log, write_log, CanFrame};
use crate::config::{ConfigError, RunConfig};
use crate::dataset::{build_windows, split_chronological};
use crate::eval::{align_truth, summarize, EvalError, EvalReport};
use crate::lstm::{gradient_check, init_model, load_model, save_model, train_with_progress, LstmError, ModelConfig};
use crate::scorer::{
    dataset_errors, fit_error_model, format_significant, read_scores, score_stream, write_scores,
    GaussianErrorModel, ScoreError,
};
use crate::simulator::{inject_attack, read_truth, write_truth, SimError};

/// Gradient checks must stay below this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<LstmError> for CliError {
    fn from(e: LstmError) -> Self {
        match e {
            LstmError::NonFinite(_) => CliError::Numeric(e.to_string()),
            LstmError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::InvalidModel(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "canpredict", version, about = "Bit-level CAN data-field prediction IDS")]
pub struct Cli {
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides a config key, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate ambient traffic for one AID.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Inject fixed-payload attack frames into a log.
    Inject {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Train a predictor for one AID and fit its error model.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_parser = parse_aid)]
        aid: u16,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        errmodel: PathBuf,
        /// Training report; defaults to MODEL.report.txt.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score every frame of one AID after the first window.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        errmodel: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_parser = parse_aid)]
        aid: u16,
        #[arg(long)]
        out: PathBuf,
    },
    /// Join scores with ground truth and report detection metrics.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

pub fn parse_aid(s: &str) -> Result<u16, String> {
    let digits = s.trim_start_matches("0x").trim_start_matches("0X");
    match u16::from_str_radix(digits, 16) {
        Ok(aid) if aid <= 0x7FF && !digits.is_empty() && digits.len() <= 3 => Ok(aid),
        _ => Err(format!("{s:?} is not an 11-bit hex AID")),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let load = |path: &Path| -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::from_file(path)?;
        apply_overrides(&mut cfg, cli.seed, &cli.overrides)?;
        Ok(cfg)
    };
    match &cli.command {
        Command::Simulate { config, out, truth } => simulate(&load(config)?, out, truth),
        Command::Inject {
            config,
            input,
            out,
            truth,
        } => inject(&load(config)?, input, out, truth),
        Command::Train {
            config,
            log,
            aid,
            model,
            errmodel,
            report,
        } => {
            let report = report.clone().unwrap_or_else(|| suffixed(model, ".report.txt"));
            train(&load(config)?, log, *aid, model, errmodel, &report).map(|_| ())
        }
        Command::Score {
            model,
            errmodel,
            log,
            aid,
            out,
        } => score(model, errmodel, log, *aid, out),
        Command::Eval { scores, truth, report } => {
            let r = eval(scores, truth, report)?;
            print!("{}", r.to_text());
            Ok(())
        }
        Command::Gradcheck { config } => {
            let cfg = match config {
                Some(path) => load(path)?,
                None => {
                    let mut cfg = RunConfig {
                        model: ModelConfig::tiny(4),
                        ..RunConfig::default()
                    };
                    apply_overrides(&mut cfg, cli.seed, &cli.overrides)?;
                    cfg
                }
            };
            gradcheck(&cfg)
        }
    }
}

pub fn apply_overrides(cfg: &mut RunConfig, seed: Option<u64>, overrides: &[String]) -> Result<(), CliError> {
    for item in overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {item:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate("config")?;
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<fs::File>, CliError> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

/// Parses a log, reporting malformed lines on stderr.
pub fn read_log(path: &Path) -> Result<Vec<CanFrame>, CliError> {
    let parsed = parse_log(open(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for err in &parsed.errors {
        eprintln!("warning: {}:{}: {}", path.display(), err.line, err.error);
    }
    Ok(parsed.frames)
}

fn write_log_and_truth(frames: &[CanFrame], out: &Path, truth: &Path) -> Result<(), CliError> {
    let mut log = Vec::new();
    write_log(&mut log, frames).expect("in-memory write");
    let mut sidecar = Vec::new();
    write_truth(&mut sidecar, frames).expect("in-memory write");
    write_file(out, &log)?;
    write_file(truth, &sidecar)
}

pub fn simulate(cfg: &RunConfig, out: &Path, truth: &Path) -> Result<(), CliError> {
    let frames = cfg.archetype.generate(&cfg.trace_spec(), cfg.aid)?;
    write_log_and_truth(&frames, out, truth)
}

/// Injection always starts from a clean log: input frames are treated as ambient.
pub fn inject(cfg: &RunConfig, input: &Path, out: &Path, truth: &Path) -> Result<(), CliError> {
    let ambient = read_log(input)?;
    let frames = inject_attack(&ambient, &cfg.attack_spec())?;
    write_log_and_truth(&frames, out, truth)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub examples: usize,
    pub train_examples: usize,
    pub holdout_examples: usize,
    pub epoch_losses: Vec<f64>,
    pub error_model: GaussianErrorModel,
    pub holdout_mean_error: Option<f64>,
    pub wall_seconds: f64,
}

impl TrainSummary {
    /// Deterministic report text; wall time is deliberately left out.
    pub fn to_text(&self, aid: u16) -> String {
        let mut s = format!(
            "aid = {aid:03X}\nexamples = {}\ntrain_examples = {}\nholdout_examples = {}\n",
            self.examples, self.train_examples, self.holdout_examples
        );
        for (i, l) in self.epoch_losses.iter().enumerate() {
            s.push_str(&format!("epoch_{:03}_loss = {}\n", i + 1, format_significant(*l, 9)));
        }
        s.push_str(&format!(
            "error_mu = {}\nerror_sigma = {}\n",
            format_significant(self.error_model.mu, 9),
            format_significant(self.error_model.sigma, 9)
        ));
        if let Some(m) = self.holdout_mean_error {
            s.push_str(&format!("holdout_mean_error = {}\n", format_significant(m, 9)));
        }
        s
    }
}

pub fn train(
    cfg: &RunConfig,
    log: &Path,
    aid: u16,
    model_out: &Path,
    errmodel_out: &Path,
    report_out: &Path,
) -> Result<TrainSummary, CliError> {
    let frames = filter_by_aid(&read_log(log)?, aid);
    let model_cfg = cfg.model_config();
    let data = build_windows(&frames, model_cfg.window);
    if data.is_empty() {
        return Err(CliError::Data(format!(
            "AID {aid:03X} has {} frames in {}; need more than {}",
            frames.len(),
            log.display(),
            model_cfg.window
        )));
    }
    let (train_set, holdout) =
        split_chronological(&data, cfg.train_fraction).map_err(|e| CliError::Usage(e.to_string()))?;
    let params = init_model(&model_cfg, model_cfg.seed)?;
    let epochs = model_cfg.epochs;
    let (params, report) = train_with_progress(params, &train_set, |epoch, loss| {
        eprintln!("epoch {epoch}/{epochs} loss {loss:.6}");
    })?;
    let error_model = fit_error_model(&dataset_errors(&params, &train_set))?;
    let holdout_mean_error = (!holdout.is_empty()).then(|| {
        let errs = dataset_errors(&params, &holdout);
        errs.iter().sum::<f64>() / errs.len() as f64
    });
    let summary = TrainSummary {
        examples: data.len(),
        train_examples: train_set.len(),
        holdout_examples: holdout.len(),
        epoch_losses: report.epoch_losses,
        error_model,
        holdout_mean_error,
        wall_seconds: report.wall_seconds,
    };
    save_model(&params, model_out)?;
    write_file(errmodel_out, error_model.to_text().as_bytes())?;
    write_file(report_out, summary.to_text(aid).as_bytes())?;
    eprintln!("trained in {:.1} s", summary.wall_seconds);
    Ok(summary)
}

pub fn score(model: &Path, errmodel: &Path, log: &Path, aid: u16, out: &Path) -> Result<(), CliError> {
    let params = load_model(model)?;
    let text = fs::read_to_string(errmodel)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", errmodel.display())))?;
    let error_model = GaussianErrorModel::from_text(&text).map_err(|e| CliError::Data(format!("{}: {e}", errmodel.display())))?;
    let frames = filter_by_aid(&read_log(log)?, aid);
    let scores = score_stream(&params, &error_model, &frames);
    let mut buf = Vec::new();
    write_scores(&mut buf, &scores).expect("in-memory write");
    write_file(out, &buf)
}

/// Writes `report` (key=value), `report.txt` (human-readable) and
/// `report.series.csv` (p-value series with truth flags).
pub fn eval(scores: &Path, truth: &Path, report: &Path) -> Result<EvalReport, CliError> {
    let scores = read_scores(open(scores)?)?;
    let truth_rows = read_truth(open(truth)?).map_err(|e| CliError::Data(e.to_string()))?;
    let labeled = align_truth(&scores, &truth_rows)?;
    let summary = summarize(&labeled)?;
    let mut series = Vec::new();
    write_scores(&mut series, &labeled).expect("in-memory write");
    write_file(report, summary.to_key_value().as_bytes())?;
    write_file(&suffixed(report, ".txt"), summary.to_text().as_bytes())?;
    write_file(&suffixed(report, ".series.csv"), &series)?;
    Ok(summary)
}

/// Runs three seeded checks starting at the config seed.
pub fn gradcheck(cfg: &RunConfig) -> Result<(), CliError> {
    let model_cfg = cfg.model_config();
    let mut worst: f64 = 0.0;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for seed in cfg.seed..cfg.seed + 3 {
        let r = gradient_check(&model_cfg, seed, 3)?;
        let _ = writeln!(
            out,
            "seed {seed}: max relative error {:.3e} over {} parameters (worst {}[{}])",
            r.max_rel_error, r.checked, r.worst_tensor, r.worst_index
        );
        worst = worst.max(r.max_rel_error);
    }
    if worst < GRADCHECK_TOLERANCE {
        let _ = writeln!(out, "gradcheck passed");
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradcheck failed: max relative error {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aid_parsing() {
        assert_eq!(parse_aid("0D0"), Ok(0x0D0));
        assert_eq!(parse_aid("0x7ff"), Ok(0x7FF));
        assert!(parse_aid("800").is_err());
        assert!(parse_aid("").is_err());
        assert!(parse_aid("00D0").is_err());
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run(["canpredict"]), 1);
        assert_eq!(run(["canpredict", "frobnicate"]), 1);
        assert_eq!(run(["canpredict", "score", "--aid", "0D0"]), 1);
        assert_eq!(run(["canpredict", "--help"]), 0);
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(LstmError::NonFinite("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(LstmError::BadMagic).exit_code(), 2);
        assert_eq!(CliError::from(ScoreError::TooFewErrors(1)).exit_code(), 2);
    }

    #[test]
    fn overrides_apply_seed_last() {
        let mut cfg = RunConfig::default();
        apply_overrides(&mut cfg, Some(5), &["seed=9".into(), "epochs=2".into()]).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.model.epochs, 2);
        assert!(apply_overrides(&mut cfg, None, &["epochs".into()]).is_err());
        assert!(apply_overrides(&mut cfg, None, &["nope=1".into()]).is_err());
    }
}
