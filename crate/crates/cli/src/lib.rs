//! `rain` command implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rain_core::config::{ExecMode, ExperimentConfig, SweepAxis};
use rain_core::harness::{write_metrics, Experiment, RunSummary, SUMMARY_CSV_HEADER};
use rain_core::transcript::{verify_dump, TranscriptDump, VerifyReport};

pub const DEFAULT_OUT_DIR: &str = "rain-out";

#[derive(Debug, Parser)]
#[command(
    name = "rain",
    version,
    about = "Simulator for sign-space robust aggregation with a two-server secure shuffle"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its metrics.
    Run(RunArgs),
    /// Re-verify every tag and the slot cardinality of a transcript dump.
    Verify(VerifyArgs),
    /// Run one experiment per value of a swept parameter.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Plaintext,
    Mpc,
}

impl From<ModeArg> for ExecMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Plaintext => ExecMode::Plaintext,
            ModeArg::Mpc => ExecMode::Mpc,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Rho,
    Epsilon,
    #[value(name = "K", alias = "k")]
    K,
    #[value(name = "d", alias = "D")]
    D,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Rho => SweepAxis::Rho,
            AxisArg::Epsilon => SweepAxis::Epsilon,
            AxisArg::K => SweepAxis::K,
            AxisArg::D => SweepAxis::D,
        }
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, env = "RAIN_OUT_DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Transcript dump written by `run` with `dump_transcript = true`.
    pub transcript: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Overrides the axis named in the config's `[sweep]` section.
    #[arg(long, value_enum)]
    pub axis: Option<AxisArg>,
}

/// How a command finished, mapped to the process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// A round aborted under the halt policy and the config marks aborts fatal.
    FatalAbort,
    /// Verification found violations.
    Violations,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::FatalAbort => 3,
            Outcome::Violations => 4,
        }
    }
}

/// Config could not be parsed or failed validation.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn execute(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Run(a) => cmd_run(&a.common),
        Command::Verify(a) => cmd_verify(&a.transcript),
        Command::Sweep(a) => cmd_sweep(&a.common, a.axis.map(Into::into)),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(&common.config).with_context(|| format!("reading {}", common.config.display()))?;
    let mut cfg =
        ExperimentConfig::from_toml(&text).map_err(|e| ConfigError(format!("{}: {e}", common.config.display())))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.mode = mode.into();
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()
        .map_err(|e| ConfigError(format!("invalid config: {e}")).into())
}

fn summary_csv(path: &Path, prefix: &[&str], rows: &[(Vec<String>, &RunSummary)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(prefix.iter().copied().chain(SUMMARY_CSV_HEADER))?;
    for (lead, s) in rows {
        w.write_record(lead.iter().cloned().chain(s.csv_row()))?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one experiment into `dir`: config snapshot, metrics stream, summary
/// CSV and any transcript dumps.
pub fn run_into(cfg: &ExperimentConfig, dir: &Path) -> Result<(RunSummary, Outcome)> {
    validate(cfg)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;

    let mut exp = Experiment::new(cfg.clone())?;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut outcome = Outcome::Success;
    for _ in 0..cfg.rounds {
        let out = exp.step()?;
        if let Some(dump) = &out.dump {
            let tdir = dir.join("transcripts");
            fs::create_dir_all(&tdir)?;
            fs::write(tdir.join(format!("round-{:04}.bin", dump.round)), dump.to_bytes())?;
        }
        let aborted = out.metrics.aborted;
        rounds.push(out.metrics);
        if aborted && cfg.abort_is_fatal {
            outcome = Outcome::FatalAbort;
            break;
        }
    }
    let summary = exp.summary();
    let file = fs::File::create(dir.join("metrics.jsonl"))?;
    write_metrics(std::io::BufWriter::new(file), &rounds, &summary)?;
    summary_csv(&dir.join("summary.csv"), &[], &[(Vec::new(), &summary)])?;
    Ok((summary, outcome))
}

pub fn cmd_run(common: &Common) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg);
    let (summary, outcome) = run_into(&cfg, &dir)?;
    println!(
        "{} rounds, final accuracy {:.4}, aborts {} -> {}",
        summary.rounds,
        summary.final_accuracy,
        summary.aborts,
        dir.display()
    );
    if outcome == Outcome::FatalAbort {
        eprintln!("round aborted by the integrity check; abort_is_fatal is set");
    }
    Ok(outcome)
}

pub fn verify_file(path: &Path) -> Result<VerifyReport> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let dump = TranscriptDump::from_bytes(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    Ok(verify_dump(&dump)?)
}

pub fn cmd_verify(path: &Path) -> Result<Outcome> {
    let report = verify_file(path)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.is_clean() {
        Outcome::Success
    } else {
        Outcome::Violations
    })
}

fn value_label(axis: SweepAxis, v: f64) -> String {
    match axis {
        SweepAxis::K | SweepAxis::D => format!("{}", v as u64),
        _ => format!("{v}"),
    }
}

pub fn cmd_sweep(common: &Common, axis: Option<SweepAxis>) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let Some(section) = cfg.sweep.clone() else {
        bail!(ConfigError(
            "sweep needs a [sweep] section listing the axis values".into()
        ));
    };
    let axis = axis.unwrap_or(section.axis);
    let mut values = section.values.clone();
    if values.iter().any(|v| !v.is_finite()) {
        bail!(ConfigError("sweep values must be finite".into()));
    }
    values.sort_by(f64::total_cmp);
    let dir = out_dir(common, &cfg);
    fs::create_dir_all(&dir)?;

    let mut summaries = Vec::with_capacity(values.len());
    let mut outcome = Outcome::Success;
    for &v in &values {
        let run_cfg = cfg.with_axis(axis, v).map_err(|e| ConfigError(e.to_string()))?;
        let label = value_label(axis, v);
        let (summary, o) = run_into(&run_cfg, &dir.join(format!("{axis}-{label}")))?;
        println!("{axis}={label}: final accuracy {:.4}", summary.final_accuracy);
        if o != Outcome::Success {
            outcome = o;
        }
        summaries.push((vec![axis.to_string(), label], summary));
    }
    let rows: Vec<(Vec<String>, &RunSummary)> = summaries.iter().map(|(l, s)| (l.clone(), s)).collect();
    summary_csv(&dir.join("sweep.csv"), &["axis", "value"], &rows)?;
    Ok(outcome)
}
