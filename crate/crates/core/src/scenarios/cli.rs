//! `dualguard` command line.
//!
//! Output directory written by `run`:
//!
//! ```text
//! <out>/transcripts/<id>.jsonl
//! <out>/audit/<id>.jsonl
//! <out>/stores/<id>.cloud.jsonl
//! <out>/stores/<id>.vault
//! <out>/verdicts/<id>.json
//! <out>/report.txt
//! <out>/report.json
//! ```

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use super::report::{Report, ReportError, ReportFormat};
use super::verdict::ScenarioVerdict;
use super::{select, RunOptions, ScenarioError, DEFAULT_FORGERIES, DEFAULT_KEY_SEED, DEFAULT_STRATEGIES};
use crate::agent::{AuditError, AuditLog};
use crate::crypto::{CryptoError, Entropy, KeyOwner, KeySource};

#[derive(Debug, Parser)]
#[command(name = "dualguard", version, about = "Run the dualguard scenario catalog and inspect its artifacts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a 2048-bit key pair and print it as JSON.
    Keygen {
        /// Key label; with --key-seed the pair is a pure function of both.
        #[arg(long, default_value = "principal")]
        label: String,
        #[arg(long, value_enum, default_value_t = Role::User)]
        role: Role,
        #[arg(long)]
        key_seed: Option<u64>,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run scenarios and write transcripts, audit logs, stores, verdicts and a report.
    Run {
        /// `all` or a comma-separated list such as `S1,S6`.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_KEY_SEED)]
        key_seed: u64,
        /// Interception strategies per tapped link in S6..S8.
        #[arg(long, default_value_t = DEFAULT_STRATEGIES)]
        strategies: usize,
        /// Forgery attempts in S12.
        #[arg(long, default_value_t = DEFAULT_FORGERIES)]
        forgeries: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify an audit log's hash chain.
    VerifyAudit { file: PathBuf },
    /// Rebuild the report from the verdicts in a run directory.
    Report {
        dir: PathBuf,
        #[arg(long, default_value = "text")]
        format: String,
        /// Exit nonzero unless every threat matrix row maps to a passing scenario.
        #[arg(long)]
        require_coverage: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Role {
    User,
    Data,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Audit { path: PathBuf, source: AuditError },
    #[error("{path}: {source}")]
    Verdict { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("{0}: no verdict files")]
    Empty(PathBuf),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_owned(), source }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io(parent))?;
    }
    std::fs::write(path, text).map_err(io(path))
}

#[derive(Serialize)]
struct KeyFile {
    key_id: String,
    role: &'static str,
    modulus_bits: usize,
    public_key_der_b64: String,
    private_key_der_b64: String,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status: 0 on success, 1 when a scenario or
/// check fails, 2 for usage errors.
pub fn cli_main<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(out, "{}", e.render()) } else { write!(err, "{}", e.render()) };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                CliError::Report(ReportError::Format(_)) => 2,
                _ => 1,
            }
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<bool, CliError> {
    let stdout = PathBuf::from("<stdout>");
    let say = |out: &mut dyn Write, s: String| out.write_all(s.as_bytes()).map_err(io(&stdout));
    match command {
        Command::Keygen { label, role, key_seed, out: file } => {
            let owner = match role {
                Role::User => KeyOwner::User,
                Role::Data => KeyOwner::Data,
            };
            let source = match key_seed {
                Some(key_seed) => KeySource::Deterministic { key_seed },
                None => KeySource::Os,
            };
            let pair = source.keypair(&label, owner)?;
            pair.self_test(&mut Entropy::os())?;
            let key = KeyFile {
                key_id: pair.key_id().to_string(),
                role: owner.as_str(),
                modulus_bits: pair.public.modulus_bits(),
                public_key_der_b64: crate::protocol::transcript::b64(&pair.public.to_der()),
                private_key_der_b64: crate::protocol::transcript::b64(&pair.private.to_der()),
            };
            let mut text = serde_json::to_string_pretty(&key).expect("key file serializes");
            text.push('\n');
            match file {
                Some(path) => {
                    write_file(&path, &text)?;
                    say(out, format!("wrote {} ({})\n", path.display(), key.key_id))?;
                }
                None => say(out, text)?,
            }
            Ok(true)
        }
        Command::Run { scenario, seed, key_seed, strategies, forgeries, out: dir } => {
            let entries = select(&scenario)?;
            let opts = RunOptions { seed, key_seed, strategies, forgeries };
            let mut verdicts = Vec::new();
            for entry in entries {
                let run = entry.run(&opts)?;
                let id = entry.id;
                write_file(&dir.join("transcripts").join(format!("{id}.jsonl")), &run.transcript.to_jsonl())?;
                write_file(&dir.join("audit").join(format!("{id}.jsonl")), &run.audit.to_jsonl())?;
                write_file(&dir.join("stores").join(format!("{id}.cloud.jsonl")), &run.store)?;
                write_file(&dir.join("stores").join(format!("{id}.vault")), &run.vault)?;
                write_file(&dir.join("verdicts").join(format!("{id}.json")), &run.verdict.to_json())?;
                say(out, verdict_line(&run.verdict))?;
                verdicts.push(run.verdict);
            }
            let report = Report::build(&verdicts);
            write_file(&dir.join("report.txt"), &report.render(ReportFormat::Text))?;
            write_file(&dir.join("report.json"), &report.render(ReportFormat::Json))?;
            say(out, format!("{}/{} scenarios passed\n", report.passed, report.total))?;
            Ok(report.passed == report.total)
        }
        Command::VerifyAudit { file } => {
            let text = std::fs::read_to_string(&file).map_err(io(&file))?;
            let log = AuditLog::from_jsonl(&text).map_err(|source| CliError::Audit { path: file.clone(), source })?;
            say(out, format!("{}: {} record(s), chain intact\n", file.display(), log.len()))?;
            Ok(true)
        }
        Command::Report { dir, format, require_coverage } => {
            let format: ReportFormat = format.parse()?;
            let verdicts = load_verdicts(&dir)?;
            let report = Report::build(&verdicts);
            say(out, report.render(format))?;
            if require_coverage {
                report.coverage_gate()?;
            }
            Ok(report.passed == report.total)
        }
    }
}

fn verdict_line(v: &ScenarioVerdict) -> String {
    let passed = v.assertions.iter().filter(|a| a.passed).count();
    let mut line = format!(
        "{:<4} {} {}/{} {}\n",
        v.scenario_id,
        if v.overall { "PASS" } else { "FAIL" },
        passed,
        v.assertions.len(),
        v.title
    );
    for a in v.assertions.iter().filter(|a| !a.passed) {
        line.push_str(&format!("       failed: {}: {}\n", a.name, a.detail));
    }
    line
}

/// Reads `<dir>/verdicts/*.json` in catalog order.
pub fn load_verdicts(dir: &Path) -> Result<Vec<ScenarioVerdict>, CliError> {
    let vdir = dir.join("verdicts");
    let mut verdicts = Vec::new();
    for entry in select("all")? {
        let path = vdir.join(format!("{}.json", entry.id));
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(io(&path))?;
        let v = ScenarioVerdict::from_json(&text).map_err(|source| CliError::Verdict { path, source })?;
        verdicts.push(v);
    }
    if verdicts.is_empty() {
        return Err(CliError::Empty(vdir));
    }
    Ok(verdicts)
}
