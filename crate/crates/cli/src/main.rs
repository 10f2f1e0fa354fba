//! `coopman`: validate, run and bound cooperative-manipulation scenarios.
//!
//! Exit codes: 0 success, 1 configuration or model error, 2 violation outcome under `--strict`
//! (an unexpected funnel or torque violation, or a missing expected one).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use coopman::sim::bounds::{analyze, DEFAULT_SAMPLES};
use coopman::sim::{ControllerKind, Overrides, RunReport, ScenarioConfig, Simulation};
use log::{debug, info};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "coopman", version, about = "Decentralized cooperative manipulation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its telemetry CSV and report.
    Run(RunArgs),
    /// Check a scenario file without running it.
    Validate(ScenarioArgs),
    /// Bound report for a PPC scenario from a measured model sweep.
    Bounds(BoundsArgs),
    /// Run every `*.toml` scenario in a directory.
    Suite(SuiteArgs),
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario file (a directory for `suite`).
    #[arg(long)]
    scenario: PathBuf,
    /// Override the controller (adaptive, ppc, passive).
    #[arg(long)]
    controller: Option<ControllerKind>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Seed of the disturbance draws.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output directory; defaults to the scenario's `output`, else `./out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with 2 when the run's violation outcome is not the expected one.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of sweep samples.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
}

#[derive(Args)]
struct SuiteArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strict: bool,
    /// Scenarios run concurrently; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
}

impl ScenarioArgs {
    fn overrides(&self) -> Overrides {
        Overrides { controller: self.controller, dt: self.dt, duration: self.duration, seed: self.seed }
    }

    fn load(&self, path: &Path) -> Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::load(path)?;
        cfg.apply(&self.overrides())?;
        Ok(cfg)
    }
}

/// Outcome classes that map to exit codes.
enum Failure {
    Error(anyhow::Error),
    Violation(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Error(e)
    }
}

fn output_dir(out: &Option<PathBuf>, scenario: &Path, cfg: &ScenarioConfig) -> PathBuf {
    match (out, &cfg.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => scenario.parent().unwrap_or(Path::new(".")).join(o),
        (None, None) => PathBuf::from("out"),
    }
}

/// Writes `path` through a temporary sibling and a rename.
fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = dir.join(format!(".{}.{}.tmp", path.file_name().and_then(|n| n.to_str()).unwrap_or("out"), std::process::id()));
    let res = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?);
        f(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res
}

fn run_one(path: &Path, args: &ScenarioArgs, out: &Option<PathBuf>) -> Result<RunReport> {
    let cfg = args.load(path)?;
    let dir = output_dir(out, path, &cfg);
    let name = cfg.name.clone();
    info!("running {} ({})", name, path.display());
    let sim = Simulation::new(cfg)?;
    let mut report = None;
    write_atomic(&dir.join(format!("{name}.csv")), |w| {
        report = Some(sim.run(Some(w))?);
        Ok(())
    })?;
    let report = report.expect("run completed");
    write_atomic(&dir.join(format!("{name}.report")), |w| Ok(w.write_all(report.to_key_values().as_bytes())?))?;
    debug!("{}", report.to_key_values());
    Ok(report)
}

fn summary(r: &RunReport) -> String {
    let mut s = format!(
        "{} t_end={:.3} funnel_violations={} saturation_violations={} wall={:.2}s",
        r.name, r.t_end, r.funnel_violations, r.saturation_violations, r.wall_clock
    );
    if r.expect_violation {
        s.push_str(" (violation expected)");
    }
    if let Some(e) = r.error() {
        s.push_str(&format!(": {e}"));
    }
    s
}

fn judge(r: &RunReport, strict: bool) -> std::result::Result<(), Failure> {
    if let coopman::sim::Outcome::Failed(e) = &r.outcome {
        return Err(Failure::Error(anyhow::anyhow!("{}: {e}", r.name)));
    }
    if strict && !r.passed() {
        return Err(Failure::Violation(summary(r)));
    }
    Ok(())
}

fn cmd_run(a: &RunArgs) -> std::result::Result<(), Failure> {
    let r = run_one(&a.scenario.scenario, &a.scenario, &a.out)?;
    println!("{} {}", r.status(), summary(&r));
    judge(&r, a.strict)
}

fn cmd_validate(a: &ScenarioArgs) -> std::result::Result<(), Failure> {
    let cfg = a.load(&a.scenario)?;
    Simulation::new(cfg.clone()).map_err(anyhow::Error::from)?;
    println!("ok {} ({}, {} agents)", cfg.name, cfg.controller.name(), cfg.agents.len());
    Ok(())
}

fn cmd_bounds(a: &BoundsArgs) -> std::result::Result<(), Failure> {
    let path = &a.scenario.scenario;
    let cfg = a.scenario.load(path)?;
    let analysis = analyze(&cfg, a.samples).map_err(anyhow::Error::from)?;
    let text = analysis.to_key_values();
    let dir = output_dir(&a.out, path, &cfg);
    write_atomic(&dir.join(format!("{}.bounds", cfg.name)), |w| Ok(w.write_all(text.as_bytes())?))?;
    print!("{text}");
    Ok(())
}

fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_suite(a: &SuiteArgs) -> std::result::Result<(), Failure> {
    let files = scenario_files(&a.scenario.scenario)?;
    if files.is_empty() {
        return Err(Failure::Error(anyhow::anyhow!("no scenarios in {}", a.scenario.scenario.display())));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .map_err(anyhow::Error::from)?;
    let results: Vec<(PathBuf, Result<RunReport>)> =
        pool.install(|| files.par_iter().map(|p| (p.clone(), run_one(p, &a.scenario, &a.out))).collect());
    let mut failed = 0;
    for (path, res) in &results {
        match res {
            Ok(r) if r.passed() => println!("PASS {}", summary(r)),
            Ok(r) => {
                failed += 1;
                println!("FAIL {}", summary(r));
            }
            Err(e) => {
                failed += 1;
                println!("FAIL {}: {e:#}", path.display());
            }
        }
    }
    println!("{} passed, {} failed", results.len() - failed, failed);
    if failed == 0 {
        Ok(())
    } else if a.strict && results.iter().all(|(_, r)| r.as_ref().is_ok_and(|r| !matches!(r.outcome, coopman::sim::Outcome::Failed(_)))) {
        Err(Failure::Violation(format!("{failed} scenario(s) failed")))
    } else {
        Err(Failure::Error(anyhow::anyhow!("{failed} scenario(s) failed")))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("COOPMAN_LOG", "warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Suite(a) => cmd_suite(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Violation(msg)) => {
            eprintln!("violation: {msg}");
            ExitCode::from(2)
        }
    }
}
