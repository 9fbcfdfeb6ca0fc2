//! Command-line scenario runner.
//!
//! Exit status: 0 when every verdict passes, 1 when any fails, 2 on usage,
//! configuration or output errors.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use estilab::scenario::{render_report, run_scenario, Format, ParamValue, ScenarioConfig, SCENARIOS};

#[derive(Parser)]
#[command(name = "estilab", version, about = "Run estimability scenarios and emit CSV or JSON reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Base seed; every trial derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte-Carlo trials; the scenario default applies when absent.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Report path, written atomically; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, env = "ESTILAB_THREADS")]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct ParamArgs {
    /// Scenario parameter as KEY=VALUE; repeatable. See `estilab list`.
    #[arg(short = 'p', long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parity ERM success probability over sample sizes.
    ParityCurve(ParamArgs),
    /// Certification rate of random sign families.
    Orthogonality(ParamArgs),
    /// Estimability of simple rules.
    Estimate(ParamArgs),
    /// Exact tail bounds and the random-class experiment.
    Inestimability(ParamArgs),
    /// Conditional variance against the optimal ℓ2 error.
    Characterize(ParamArgs),
    /// Moment LP optimum and dual certificate grid.
    LpBound(ParamArgs),
    /// Closed-form consistent-count moment bounds.
    Moments(ParamArgs),
    /// Stability-based estimation and the remove-k protocol.
    Stability(ParamArgs),
    /// Run a TOML config file; `-` reads stdin.
    Run { config: PathBuf },
    /// Describe every scenario and its parameters.
    List,
}

fn parse_param(s: &str) -> anyhow::Result<(String, ParamValue)> {
    let Some((k, v)) = s.split_once('=') else { bail!("parameter `{s}` is not KEY=VALUE") };
    let value = match v.trim().parse::<f64>() {
        Ok(x) => ParamValue::Number(x),
        Err(_) => ParamValue::Text(v.to_string()),
    };
    Ok((k.trim().to_string(), value))
}

fn read_config(path: &PathBuf) -> anyhow::Result<ScenarioConfig> {
    let text = if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).context("reading config from stdin")?;
        s
    } else {
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
    };
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Writes to stdout; a closed pipe downstream is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e).context("writing to stdout"),
        _ => Ok(()),
    }
}

fn list() -> anyhow::Result<()> {
    let mut out = String::new();
    for s in SCENARIOS {
        out += &format!("{}: {} (default trials {})\n", s.name, s.summary, s.default_trials);
        for p in s.params {
            let default = if p.required { "required".to_string() } else { format!("default {}", p.default) };
            out += &format!("    {} [{default}]: {}\n", p.name, p.doc);
        }
    }
    emit(&out)
}

fn build_config(cli: Cli) -> anyhow::Result<Option<ScenarioConfig>> {
    let (name, params) = match cli.command {
        Command::List => {
            list()?;
            return Ok(None);
        }
        Command::Run { config } => {
            let mut c = read_config(&config)?;
            apply_common(&mut c, &cli.common);
            return Ok(Some(c));
        }
        Command::ParityCurve(p) => ("parity-curve", p),
        Command::Orthogonality(p) => ("orthogonality", p),
        Command::Estimate(p) => ("estimate", p),
        Command::Inestimability(p) => ("inestimability", p),
        Command::Characterize(p) => ("characterize", p),
        Command::LpBound(p) => ("lp-bound", p),
        Command::Moments(p) => ("moments", p),
        Command::Stability(p) => ("stability", p),
    };
    let mut c = ScenarioConfig::new(name);
    for p in &params.params {
        let (k, v) = parse_param(p)?;
        c.parameters.insert(k, v);
    }
    apply_common(&mut c, &cli.common);
    Ok(Some(c))
}

/// Command-line flags override the config file.
fn apply_common(c: &mut ScenarioConfig, common: &Common) {
    if let Some(s) = common.seed {
        c.seed = s;
    }
    if common.trials.is_some() {
        c.trials = common.trials;
    }
    if common.out.is_some() {
        c.output.clone_from(&common.out);
    }
    match common.format {
        Some(OutputFormat::Csv) => c.format = Format::Csv,
        Some(OutputFormat::Json) => c.format = Format::Json,
        None => {}
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let Some(config) = build_config(cli)? else { return Ok(true) };
    let report = run_scenario(&config)?;
    if config.output.is_none() {
        emit(&render_report(&report, config.format)?)?;
    }
    let failed = report.verdicts.iter().filter(|v| !v.pass).count();
    eprintln!(
        "{}: {} rows, {} verdicts, {failed} failed, {:.2}s",
        report.scenario,
        report.rows.len(),
        report.verdicts.len(),
        report.wall_time
    );
    for v in report.verdicts.iter().filter(|v| !v.pass) {
        eprintln!("FAIL {} [{} at x={}]: {} {} {}", v.claim, v.series, v.x, v.observed, v.relation.symbol(), v.bound);
    }
    Ok(failed == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
