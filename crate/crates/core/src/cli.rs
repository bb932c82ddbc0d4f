//! `rigor` command line.
//!
//! Exit codes: 0 ok, 1 check failed, 2 usage or input error, 3 session
//! halted on a protocol violation.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::executor::{ExecutorError, HarnessExecutor};
use crate::protocol::{LordConfig, LordState, NaiveConfig, ProtocolConfig, StatisticalProtocol};
use crate::scaffold::{
    audit_scaffold, generate_scaffold, validate_contract, DataContract, HarnessDialect, Scaffold,
    StatisticalTestSpec,
};
use crate::session::{
    read_trace, replay_rows, replay_trace, write_trace, OutcomeStatus, Session, SessionStatus,
};
use crate::simulation::{check_table1, run_simulation, table1, MixtureConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PROTOCOL_HALT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rigor", version, about = "Online FDR sessions, harness scaffolding and FDR simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo FDR / power comparison of the naive rule and LORD++.
    Simulate(SimulateArgs),
    /// Run every idea in a manifest through scaffold, harness and LORD++.
    RunSession(RunSessionArgs),
    /// Render a harness for a data contract and test spec.
    GenScaffold(ScaffoldArgs),
    /// Check a harness file against a data contract and test spec.
    AuditScaffold(AuditArgs),
    /// Re-check the decisions recorded in a JSON-lines trace.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = table1::SEED)]
    seed: u64,
    #[arg(long, default_value_t = table1::RUNS)]
    runs: usize,
    #[arg(long, default_value_t = table1::N_HYPOTHESES)]
    n: usize,
    #[arg(long, default_value_t = table1::PI1)]
    pi1: f64,
    #[arg(long = "beta-a", default_value_t = table1::BETA_A)]
    beta_a: f64,
    #[arg(long, default_value_t = table1::ALPHA)]
    alpha: f64,
    /// Initial LORD++ wealth; defaults to alpha / 2.
    #[arg(long)]
    w0: Option<f64>,
    /// Also write the summary as CSV to this path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Compare against the reference table and exit 1 on any miss.
    #[arg(long = "check-table1")]
    check_table1: bool,
    /// Run replicates on one thread.
    #[arg(long)]
    serial: bool,
}

#[derive(Debug, Args)]
struct ContractArgs {
    #[arg(long = "exploration-data")]
    exploration_data: PathBuf,
    #[arg(long = "validation-data")]
    validation_data: PathBuf,
    #[arg(long, default_value_t = 3)]
    reps: u32,
    #[arg(long, default_value_t = 10)]
    folds: u32,
    #[arg(long, default_value = "python")]
    dialect: String,
}

#[derive(Debug, Args)]
struct ScaffoldArgs {
    #[command(flatten)]
    contract: ContractArgs,
    #[arg(long)]
    label: String,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[command(flatten)]
    contract: ContractArgs,
    #[arg(long)]
    label: String,
    #[arg(long)]
    harness: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Debug, Args)]
struct RunSessionArgs {
    #[command(flatten)]
    contract: ContractArgs,
    /// JSON-lines manifest: {"label": ..., "implementation": ...} per line.
    #[arg(long)]
    ideas: PathBuf,
    #[arg(long = "work-dir")]
    work_dir: PathBuf,
    #[arg(long, default_value = "python3")]
    interpreter: String,
    #[arg(long = "timeout-secs", default_value_t = 600.0)]
    timeout_secs: f64,
    /// Directory holding the verified statistics module.
    #[arg(long = "runtime-dir")]
    runtime_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    w0: Option<f64>,
    /// Trace export path; defaults to <work-dir>/trace.jsonl.
    #[arg(long = "trace-out")]
    trace_out: Option<PathBuf>,
    /// Seed forwarded to the harness.
    #[arg(long)]
    seed: Option<u64>,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdeaSpec {
    pub label: String,
    #[serde(rename = "implementation")]
    pub implementation_source_path: PathBuf,
}

/// Reads an ideas manifest. Relative implementation paths resolve against
/// the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<IdeaSpec>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut ideas = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut idea: IdeaSpec = serde_json::from_str(line)
            .map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?;
        if idea.label.trim().is_empty() {
            return Err(format!("{} line {}: empty label", path.display(), i + 1));
        }
        if !seen.insert(idea.label.clone()) {
            return Err(format!(
                "{} line {}: duplicate label {:?}",
                path.display(),
                i + 1,
                idea.label
            ));
        }
        if idea.implementation_source_path.is_relative() {
            idea.implementation_source_path = base.join(&idea.implementation_source_path);
        }
        ideas.push(idea);
    }
    Ok(ideas)
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::RunSession(a) => cmd_run_session(a, out, err),
        Command::GenScaffold(a) => cmd_gen_scaffold(a, out),
        Command::AuditScaffold(a) => cmd_audit_scaffold(a, out),
        Command::Replay(a) => cmd_replay_trace(a, out),
    };
    match result {
        Ok(code) => code,
        Err(CliError(code, message)) => {
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}

struct CliError(i32, String);

fn usage(message: impl std::fmt::Display) -> CliError {
    CliError(EXIT_USAGE, message.to_string())
}

fn io_err(e: std::io::Error) -> CliError {
    usage(e)
}

fn lord_config(alpha: f64, w0: Option<f64>) -> Result<LordConfig, CliError> {
    let mut config = LordConfig::with_defaults(alpha);
    if let Some(w0) = w0 {
        config.w0 = w0;
    }
    config.validate().map_err(usage)?;
    Ok(config)
}

fn cmd_simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let config = MixtureConfig {
        n_hypotheses: a.n,
        pi1: a.pi1,
        beta_a: a.beta_a,
        seed: a.seed,
        n_runs: a.runs,
    };
    config.validate().map_err(usage)?;
    let protocols = vec![
        ProtocolConfig::Naive(NaiveConfig { alpha: a.alpha }),
        ProtocolConfig::Lord(lord_config(a.alpha, a.w0)?),
    ];
    let report = run_simulation(&config, &protocols, !a.serial).map_err(usage)?;
    write!(out, "{}", report.to_table()).map_err(io_err)?;
    writeln!(
        out,
        "note: LORD++ uses w0 = {} and the default discount schedule; its power depends on both.",
        a.w0.unwrap_or(a.alpha / 2.0)
    )
    .map_err(io_err)?;
    if let Some(path) = &a.csv {
        fs::write(path, report.to_csv()).map_err(io_err)?;
    }
    if !a.check_table1 {
        return Ok(EXIT_OK);
    }
    let checks = check_table1(&report);
    for c in &checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "[{mark}] {}: {}", c.name, c.detail).map_err(io_err)?;
    }
    Ok(if checks.iter().all(|c| c.passed) {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}

fn contract_and_spec(
    a: &ContractArgs,
) -> Result<(DataContract, StatisticalTestSpec, HarnessDialect), CliError> {
    let contract = DataContract::new(&a.exploration_data, &a.validation_data);
    validate_contract(&contract).map_err(usage)?;
    let spec = StatisticalTestSpec::paired_t_test(a.reps, a.folds).map_err(usage)?;
    let dialect: HarnessDialect = a.dialect.parse().map_err(usage)?;
    Ok((contract, spec, dialect))
}

fn cmd_gen_scaffold(a: ScaffoldArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (contract, spec, dialect) = contract_and_spec(&a.contract)?;
    let scaffold = generate_scaffold(&contract, &spec, &a.label, dialect).map_err(usage)?;
    match &a.out {
        Some(path) => fs::write(path, scaffold.harness_source()).map_err(io_err)?,
        None => write!(out, "{}", scaffold.harness_source()).map_err(io_err)?,
    }
    Ok(EXIT_OK)
}

fn cmd_audit_scaffold(a: AuditArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (contract, spec, dialect) = contract_and_spec(&a.contract)?;
    let source = fs::read_to_string(&a.harness)
        .map_err(|e| usage(format!("{}: {e}", a.harness.display())))?;
    let scaffold = Scaffold::from_parts(contract, spec, a.label, dialect, source);
    match audit_scaffold(&scaffold) {
        Ok(()) => {
            writeln!(out, "ok").map_err(io_err)?;
            Ok(EXIT_OK)
        }
        Err(violations) => {
            for v in violations {
                writeln!(out, "violation: {v}").map_err(io_err)?;
            }
            Ok(EXIT_CHECK_FAILED)
        }
    }
}

fn cmd_replay_trace(a: ReplayArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let file = fs::File::open(&a.trace).map_err(|e| usage(format!("{}: {e}", a.trace.display())))?;
    let records = read_trace(BufReader::new(file)).map_err(usage)?;
    let rows = replay_rows(&records).map_err(usage)?;
    match replay_trace(&rows) {
        Ok(()) => {
            writeln!(out, "ok: {} decisions consistent", rows.len()).map_err(io_err)?;
            Ok(EXIT_OK)
        }
        Err(bad) => {
            for i in bad {
                writeln!(out, "inconsistent: {i}").map_err(io_err)?;
            }
            Ok(EXIT_CHECK_FAILED)
        }
    }
}

fn cmd_run_session(
    a: RunSessionArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, CliError> {
    let absolute = |p: &Path| std::path::absolute(p).map_err(io_err);
    let mut contract_args = a.contract;
    contract_args.exploration_data = absolute(&contract_args.exploration_data)?;
    contract_args.validation_data = absolute(&contract_args.validation_data)?;
    let (contract, spec, dialect) = contract_and_spec(&contract_args)?;

    if !(a.timeout_secs.is_finite() && a.timeout_secs > 0.0) {
        return Err(usage("--timeout-secs must be positive"));
    }
    let ideas = read_manifest(&a.ideas).map_err(usage)?;
    let sources = ideas
        .iter()
        .map(|idea| {
            fs::read_to_string(&idea.implementation_source_path).map_err(|e| {
                usage(format!("{}: {e}", idea.implementation_source_path.display()))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut executor = HarnessExecutor::new(
        absolute(&a.work_dir)?,
        &a.interpreter,
        Duration::from_secs_f64(a.timeout_secs),
    )
    .map_err(usage)?;
    if let Some(dir) = &a.runtime_dir {
        executor = executor.with_runtime_dir(absolute(dir)?);
    }
    if let Some(seed) = a.seed {
        executor = executor.with_seed(seed);
    }

    let mut session =
        Session::<LordState>::open(lord_config(a.alpha, a.w0)?).map_err(usage)?;
    let mut setup_error = None;
    for (idea, source) in ideas.iter().zip(&sources) {
        let scaffold = generate_scaffold(&contract, &spec, &idea.label, dialect).map_err(usage)?;
        let step = session.test_hypothesis(&scaffold, |s| {
            match executor.execute_harness(s, source) {
                Ok(result) => result.into_p_value(),
                Err(e @ ExecutorError::Workspace { .. }) => {
                    let text = e.to_string();
                    setup_error = Some(text.clone());
                    Err(text)
                }
                Err(e) => Err(e.to_string()),
            }
        });
        if setup_error.is_some() || step.is_err() {
            break;
        }
    }

    fs::create_dir_all(&executor.work_dir).map_err(io_err)?;
    let trace_path = a
        .trace_out
        .unwrap_or_else(|| executor.work_dir.join("trace.jsonl"));
    let file = fs::File::create(&trace_path)
        .map_err(|e| usage(format!("{}: {e}", trace_path.display())))?;
    write_trace(session.outcomes(), file).map_err(io_err)?;

    writeln!(
        out,
        "{:>3}  {:<40} {:>10} {:>12}  discovery",
        "t", "idea", "p-value", "alpha_t"
    )
    .map_err(io_err)?;
    for o in session.outcomes() {
        match &o.status {
            OutcomeStatus::Tested {
                p_value,
                threshold,
                is_discovery,
            } => writeln!(
                out,
                "{:>3}  {:<40} {:>10.5} {:>12.6}  {}",
                o.test_index, o.idea_label, p_value, threshold, is_discovery
            ),
            OutcomeStatus::ExecutionFailed { reason } => writeln!(
                out,
                "{:>3}  {:<40} {:>10} {:>12}  execution failed: {}",
                "-",
                o.idea_label,
                "-",
                "-",
                reason.lines().next().unwrap_or("")
            ),
        }
        .map_err(io_err)?;
    }
    writeln!(
        out,
        "tests: {}, discoveries: {}, trace: {}",
        session.state().current_time(),
        session.state().rejection_count(),
        trace_path.display()
    )
    .map_err(io_err)?;

    if let Some(message) = setup_error {
        return Err(usage(message));
    }
    if let SessionStatus::Halted(e) = session.status() {
        let _ = writeln!(err, "session halted: {e}");
        return Ok(EXIT_PROTOCOL_HALT);
    }
    Ok(EXIT_OK)
}
