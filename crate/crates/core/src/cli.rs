//! The `icl-lab` command line.
//!
//! ```text
//! icl-lab bounds calc --kind textgen --V 50000 --m 100 --epsilon 0.1 --delta 0.01 --mode bigo
//! icl-lab verify textgen --config textgen.json [--output report.json]
//! icl-lab prompt build --pairs pairs.json --query "Amazing soundtrack!"
//! ```
//!
//! Exit codes: 0 success, 1 parameter or usage error, 2 experiment ran but
//! did not pass, 3 I/O error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundKind, BoundMode, BoundParams};
use crate::harness::{run_experiment, ExperimentConfig, ExperimentKind};
use crate::prompt::{build_prompt, separator_collisions, similarity_select, ExamplePair, PromptConfig};
use crate::{LabError, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARAM: i32 = 1;
pub const EXIT_FAILED: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "icl-lab", version, about = "Sample-complexity bounds and their Monte Carlo verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form sample-size calculators.
    Bounds {
        #[command(subcommand)]
        action: BoundsAction,
    },
    /// Run a Monte Carlo experiment and write its JSON and CSV reports.
    Verify(VerifyArgs),
    /// Few-shot prompt construction.
    Prompt {
        #[command(subcommand)]
        action: PromptAction,
    },
}

#[derive(Debug, Subcommand)]
enum BoundsAction {
    /// Print a bound as JSON.
    Calc(CalcArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CalcKind {
    Textgen,
    #[value(alias = "bounded_textgen")]
    BoundedTextgen,
    Coreset,
    Knn,
    #[value(alias = "subset_penalty")]
    SubsetPenalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliMode {
    #[value(alias = "big-o", alias = "big_o")]
    Bigo,
    Exact,
}

#[derive(Debug, Args)]
struct CalcArgs {
    #[arg(long, value_enum)]
    kind: CalcKind,
    /// Vocabulary size.
    #[arg(long = "V", visible_alias = "vocab-size")]
    vocab_size: Option<u64>,
    /// Number of contexts.
    #[arg(long = "m", visible_alias = "contexts")]
    contexts: Option<u64>,
    /// Input dimension.
    #[arg(long = "d", visible_alias = "dim")]
    dim: Option<u64>,
    /// Output sequence length.
    #[arg(long = "l", visible_alias = "length")]
    length: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum, default_value = "bigo")]
    mode: CliMode,
    #[arg(long, default_value_t = 1.0)]
    constant: f64,
    /// Subset size for `subset-penalty`.
    #[arg(long)]
    size: Option<u64>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// textgen, bounded_textgen, coreset, knn or subset_penalty.
    kind: String,
    #[arg(long)]
    config: PathBuf,
    /// Report path; overrides `output_path` in the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum PromptAction {
    /// Print the prompt for a set of example pairs and a query.
    Build(BuildArgs),
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// JSON file: a list of pairs, or {"pairs": [...], "query": "..."}.
    #[arg(long)]
    pairs: PathBuf,
    /// Overrides the query in the pairs file.
    #[arg(long)]
    query: Option<String>,
    #[arg(long, default_value = "[SEP]")]
    separator: String,
    #[arg(long, default_value = " ")]
    joiner: String,
    /// Omit the separator between the last example and the query.
    #[arg(long)]
    no_trailing_separator: bool,
    /// Keep only the k examples most similar to the query, closest last.
    #[arg(long)]
    select_k: Option<usize>,
    /// Embedding dimension used by --select-k.
    #[arg(long, default_value_t = 1024)]
    embed_dim: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PairsFile {
    List(Vec<ExamplePair>),
    WithQuery {
        pairs: Vec<ExamplePair>,
        #[serde(default)]
        query: Option<String>,
    },
}

#[derive(Serialize)]
struct PenaltyResult {
    kind: &'static str,
    size: u64,
    constant: f64,
    penalty: f64,
    formula_text: String,
}

fn exit_code(e: &LabError) -> i32 {
    if e.is_io() {
        EXIT_IO
    } else {
        EXIT_PARAM
    }
}

/// Runs the CLI on `argv` (including the program name), writing normal
/// output to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_PARAM
                }
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Bounds {
            action: BoundsAction::Calc(args),
        } => calc(&args, out),
        Command::Verify(args) => verify(&args, out, err),
        Command::Prompt {
            action: PromptAction::Build(args),
        } => prompt_build(&args, out, err),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn required<T>(value: Option<T>, flag: &str, kind: CalcKind) -> Result<T> {
    value.ok_or_else(|| {
        LabError::param(format!(
            "missing required flag {flag} for --kind {}",
            kind.to_possible_value().expect("no skipped variants").get_name()
        ))
    })
}

fn calc(args: &CalcArgs, out: &mut dyn Write) -> Result<i32> {
    let kind = args.kind;
    if kind == CalcKind::SubsetPenalty {
        let size = required(args.size, "--size", kind)?;
        let penalty = bounds::subset_penalty(size, args.constant)?;
        let r = PenaltyResult {
            kind: "subset_penalty",
            size,
            constant: args.constant,
            penalty,
            formula_text: format!("penalty = c / sqrt(n) with c = {}, n = {size}", args.constant),
        };
        writeln!(out, "{}", serde_json::to_string_pretty(&r)?)?;
        return Ok(EXIT_OK);
    }
    let defaults = BoundParams::default();
    let needs_delta = matches!(kind, CalcKind::Textgen | CalcKind::BoundedTextgen | CalcKind::Knn);
    let needs_vocab = matches!(kind, CalcKind::Textgen | CalcKind::BoundedTextgen);
    let params = BoundParams {
        vocab_size: if needs_vocab {
            required(args.vocab_size, "--V", kind)?
        } else {
            args.vocab_size.unwrap_or(defaults.vocab_size)
        },
        contexts: args.contexts.unwrap_or(1),
        dim: if kind == CalcKind::Coreset {
            required(args.dim, "--d", kind)?
        } else {
            args.dim.unwrap_or(1)
        },
        length: args.length.unwrap_or(1),
        epsilon: required(args.epsilon, "--epsilon", kind)?,
        delta: if needs_delta {
            required(args.delta, "--delta", kind)?
        } else {
            args.delta.unwrap_or(defaults.delta)
        },
        constant: args.constant,
    };
    let bound_kind = match kind {
        CalcKind::Textgen => BoundKind::Textgen,
        CalcKind::BoundedTextgen => BoundKind::BoundedTextgen,
        CalcKind::Coreset => BoundKind::Coreset,
        CalcKind::Knn => BoundKind::Knn,
        CalcKind::SubsetPenalty => unreachable!(),
    };
    let mode = match args.mode {
        CliMode::Bigo => BoundMode::BigO,
        CliMode::Exact => BoundMode::Exact,
    };
    let result = bounds::calculate(bound_kind, &params, mode)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&result)?)?;
    Ok(EXIT_OK)
}

fn verify(args: &VerifyArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let kind: ExperimentKind = args.kind.parse()?;
    let mut cfg = ExperimentConfig::from_json_file(&args.config)?;
    if cfg.kind != kind {
        return Err(LabError::param(format!(
            "config {} is for {} experiments, not {}",
            args.config.display(),
            cfg.kind.as_str(),
            kind.as_str()
        )));
    }
    if let Some(o) = &args.output {
        cfg.output_path = Some(o.clone());
    }
    let path = cfg
        .output_path
        .clone()
        .ok_or_else(|| LabError::param("no report path: set output_path in the config or pass --output"))?;
    let report = run_experiment(&cfg)?;
    let csv_path = report.write(&path)?;
    writeln!(
        out,
        "{} trials={} failures={} failure_rate={} delta={} ci_halfwidth={} pass={}",
        kind.as_str(),
        report.trials,
        report.failures,
        report.failure_rate,
        report.delta_target,
        report.ci_halfwidth,
        report.pass
    )?;
    if let Some(s) = report.sweep.as_ref().and_then(|s| s.log_log_slope) {
        writeln!(out, "log_log_slope={s}")?;
    }
    writeln!(out, "report={} csv={}", path.display(), csv_path.display())?;
    if !report.pass {
        writeln!(err, "experiment did not pass: failure rate above delta + ci")?;
        return Ok(EXIT_FAILED);
    }
    Ok(EXIT_OK)
}

fn prompt_build(args: &BuildArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let text = fs::read_to_string(&args.pairs)?;
    let parsed: PairsFile = serde_json::from_str(&text)
        .map_err(|e| LabError::param(format!("{}: {e}", args.pairs.display())))?;
    let (mut pairs, file_query) = match parsed {
        PairsFile::List(p) => (p, None),
        PairsFile::WithQuery { pairs, query } => (pairs, query),
    };
    let query = args
        .query
        .clone()
        .or(file_query)
        .ok_or_else(|| LabError::param("no query: pass --query or include \"query\" in the pairs file"))?;
    if let Some(k) = args.select_k {
        pairs = similarity_select(&pairs, &query, k, args.embed_dim)?;
    }
    let cfg = PromptConfig {
        separator: args.separator.clone(),
        pair_joiner: args.joiner.clone(),
        trailing_separator_before_query: !args.no_trailing_separator,
    };
    for i in separator_collisions(&pairs, &query, &cfg) {
        let what = if i == pairs.len() {
            "the query".to_string()
        } else {
            format!("example {i}")
        };
        writeln!(err, "warning: {what} contains the separator {:?}", cfg.separator)?;
    }
    writeln!(out, "{}", build_prompt(&pairs, &query, &cfg)?)?;
    Ok(EXIT_OK)
}
