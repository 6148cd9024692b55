//! `fabric`: runs scenarios, compares saved reports and re-renders them.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration or input,
//! 3 when `compare` finds diverging final decisions.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fabric_core::runtime::{compare, run_scenario, Comparison, FeatureSet, ReportFormat, RuntimeError, ScenarioConfig, ScenarioReport};

#[derive(Parser)]
#[command(name = "fabric", version, about = "Simulate an agent-centric data fabric")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and emit its report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the seed stored in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        /// `all`, `none` or a comma list; overrides the scenario file.
        #[arg(long)]
        features: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "json")]
        format: String,
    },
    /// Print per-metric deltas from report A to report B.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Re-render a saved JSON report.
    Replay {
        report: PathBuf,
        #[arg(long, default_value = "table")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<RuntimeError> for Failure {
    fn from(e: RuntimeError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn parse_format(s: &str) -> Result<ReportFormat, Failure> {
    s.parse().map_err(|e: RuntimeError| Failure::Config(e.to_string()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_report(path: &Path) -> Result<ScenarioReport, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    ScenarioReport::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn render_comparison(c: &Comparison, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => c.to_table(),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(c).expect("comparison serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s = String::from("metric,a,b,delta,percent\n");
            for d in &c.deltas {
                let pct = d.percent.map(|p| p.to_string()).unwrap_or_default();
                let _ = writeln!(s, "{},{},{},{},{pct}", d.metric, d.a, d.b, d.delta);
            }
            let _ = writeln!(s, "final_decision,,,,{}", if c.decisions_match { "identical" } else { "divergent" });
            s
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Run { scenario, seed, features, out, format } => {
            let format = parse_format(&format)?;
            let mut cfg = ScenarioConfig::from_path(&scenario)?;
            if let Some(f) = features {
                cfg.features = f.parse::<FeatureSet>()?;
            }
            let base = scenario.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let report = run_scenario(&cfg, base, seed.unwrap_or(cfg.seed))?;
            emit(&report.render(format)?, out.as_deref())?;
            Ok(0)
        }
        Command::Compare { a, b, format } => {
            let format = parse_format(&format)?;
            let comparison = compare(&read_report(&a)?, &read_report(&b)?);
            print!("{}", render_comparison(&comparison, format));
            Ok(if comparison.decisions_match { 0 } else { 3 })
        }
        Command::Replay { report, format, out } => {
            let format = parse_format(&format)?;
            emit(&read_report(&report)?.render(format)?, out.as_deref())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
