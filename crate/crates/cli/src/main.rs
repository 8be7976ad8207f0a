use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mdbe::env::{EnvConfig, EnvSpec};
use mdbe::harness::{self, SummaryRow, SweepConfig};
use mdbe::shift_oracle::{self, Metrics, ShiftReport};
use serde::{Deserialize, Serialize};
use serde_json::Value;

mod overrides;

#[derive(Parser)]
#[command(
    name = "mdbe",
    version,
    about = "Run non-stationary Lipschitz bandit experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One replication (the base seed) of every configured agent.
    Run(RunArgs),
    /// Every configured agent over every replication seed.
    Sweep(RunArgs),
    /// Significant shifts and change metrics of an environment.
    Shifts(ShiftArgs),
    /// Per-agent mean and 95% interval of a sweep's checkpoints.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override a config entry by dotted path, e.g. `seeds.replications=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory; falls back to `out_dir` in the config, then `runs`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for replications.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ShiftArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_name = "N", default_value_t = 64)]
    grid: usize,
    /// Also write shifts.json and the effective config into this directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// A checkpoints CSV, or a sweep output directory containing one.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Write summary.csv with every checkpoint into this directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

/// Environment-only config accepted by `shifts`. Sweep configs work too;
/// their other fields are ignored.
#[derive(Debug, Serialize, Deserialize)]
struct ShiftConfig {
    schema: u32,
    env: EnvConfig,
}

#[derive(Serialize)]
struct ShiftOutput {
    env: String,
    #[serde(flatten)]
    report: ShiftReport,
    metrics: Metrics,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Failure {
            code: 2,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<mdbe::Error> for Failure {
    fn from(e: mdbe::Error) -> Self {
        use mdbe::Error::*;
        let code = match e {
            Input(_) | Config(_) => 1,
            Resource(_) | Io { .. } | Json(_) => 2,
            Invariant(_) | Sequencing(_) | Query(_) => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => execute(args, true),
        Command::Sweep(args) => execute(args, false),
        Command::Shifts(args) => shifts(args),
        Command::Summarize(args) => summarize(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(args: &ConfigArgs) -> CliResult<Value> {
    let text = fs::read_to_string(&args.config).map_err(|e| Failure {
        code: 1,
        message: format!("cannot read config {}: {e}", args.config.display()),
    })?;
    let mut doc: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("{}: {e}", args.config.display())))?;
    for o in &args.overrides {
        overrides::apply(&mut doc, o).map_err(Failure::config)?;
    }
    Ok(doc)
}

fn execute(args: RunArgs, single: bool) -> CliResult<()> {
    let mut cfg = SweepConfig::from_value(load(&args.config)?)?;
    if single {
        cfg.seeds.replications = 1;
    }
    let dir = args
        .out
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    cfg.out_dir = Some(dir.display().to_string());
    let records = harness::sweep(&cfg, args.jobs)?;
    harness::write_outputs(&dir, &cfg, &records)?;

    let mut stdout = std::io::stdout().lock();
    for r in &records {
        let _ = writeln!(stdout, "{}\t{:.3}", r.run_id, r.final_regret());
    }
    let _ = writeln!(stdout, "wrote {} runs to {}", records.len(), dir.display());
    Ok(())
}

fn shifts(args: ShiftArgs) -> CliResult<()> {
    let doc = load(&args.config)?;
    let env_only = match doc {
        Value::Object(ref map) => Value::Object(
            map.iter()
                .filter(|(k, _)| *k == "schema" || *k == "env")
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        ),
        _ => return Err(Failure::config("config must be a JSON object")),
    };
    let cfg: ShiftConfig =
        serde_json::from_value(env_only).map_err(|e| Failure::config(format!("config: {e}")))?;
    if cfg.schema != harness::SCHEMA_VERSION {
        return Err(Failure::config(format!(
            "unsupported schema {}, expected {}",
            cfg.schema,
            harness::SCHEMA_VERSION
        )));
    }
    let env = EnvSpec::from_config(cfg.env.clone())?;
    let output = ShiftOutput {
        env: env.digest(),
        report: shift_oracle::significant_shifts(&env, args.grid)?,
        metrics: shift_oracle::metrics(&env, args.grid)?,
    };
    let text = serde_json::to_string_pretty(&output).map_err(mdbe::Error::from)? + "\n";
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        let path = dir.join(harness::EFFECTIVE_CONFIG_FILE);
        let effective = serde_json::to_string_pretty(&cfg).map_err(mdbe::Error::from)? + "\n";
        fs::write(&path, effective).map_err(|e| Failure::io(&path, e))?;
        let path = dir.join("shifts.json");
        fs::write(&path, &text).map_err(|e| Failure::io(&path, e))?;
    }
    print!("{text}");
    Ok(())
}

fn summarize(args: SummarizeArgs) -> CliResult<()> {
    let path = if args.input.is_dir() {
        args.input.join(harness::CHECKPOINTS_FILE)
    } else {
        args.input.clone()
    };
    let file = fs::File::open(&path).map_err(|e| Failure {
        code: 1,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let rows = harness::read_checkpoints(std::io::BufReader::new(file))?;
    if rows.is_empty() {
        return Err(Failure::config(format!("{} has no rows", path.display())));
    }
    let summary = harness::summarize(&rows);

    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "agent\tt\tn\tmean\tci95");
    for row in harness::final_rows(&summary) {
        let ci = row
            .ci95
            .map_or_else(|| "-".to_string(), |h| format!("{h:.3}"));
        let _ = writeln!(
            stdout,
            "{}\t{}\t{}\t{:.3}\t{ci}",
            row.agent, row.t, row.n, row.mean
        );
    }

    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        let path = dir.join("summary.csv");
        write_summary(&path, &summary)?;
    }
    Ok(())
}

fn write_summary(path: &Path, summary: &[SummaryRow]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Failure {
            code: 2,
            message: format!("{}: {e}", path.display()),
        })?;
    let fail = |e: csv::Error| Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    };
    w.write_record(["agent", "t", "n", "mean", "sd", "ci95"])
        .map_err(fail)?;
    for r in summary {
        let ci = r.ci95.map(|h| h.to_string()).unwrap_or_default();
        w.write_record([
            r.agent.clone(),
            r.t.to_string(),
            r.n.to_string(),
            r.mean.to_string(),
            r.sd.to_string(),
            ci,
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| Failure::io(path, e))
}
