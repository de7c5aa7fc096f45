use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iree_core::config::ScenarioConfig;
use iree_core::gradients::Objective;
use iree_core::harness::{self, RunConfig, ShadowingSpec, SweepAxis};

#[derive(Parser, Debug)]
#[command(name = "iree-plan", version, about = "Base-station planning by integrated relative energy efficiency")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize one design per seed; writes report.json, trace.jsonl and fields.csv.
    Optimize(CommonArgs),
    /// Run the IREE, EE and SE objectives side by side; writes compare.csv and fields.csv.
    Compare(CommonArgs),
    /// Sweep P_max or B_max; writes sweep.csv with a region label per point.
    Sweep(CommonArgs),
    /// Sweep and order the points by spectral efficiency; writes tradeoff.csv.
    Tradeoff(CommonArgs),
    /// Generate the scenario's traffic field; writes traffic.csv.
    GenTraffic(CommonArgs),
    /// Run the invariant checks on the scenario; writes validate.json.
    Validate(CommonArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Scenario TOML file, or the name of a built-in preset (rural, urban).
    #[arg(long, default_value = "rural")]
    scenario: String,
    /// Seeds, comma separated.
    #[arg(long = "seed", value_delimiter = ',', default_value = "1")]
    seeds: Vec<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// P_max sweep values in dBW, comma separated.
    #[arg(long = "pmax-dbw", value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "bmax_hz")]
    pmax_dbw: Vec<f64>,
    /// B_max sweep values in Hz, comma separated; k, M, G and T suffixes accepted.
    #[arg(long = "bmax-hz", value_delimiter = ',', value_parser = parse_hz)]
    bmax_hz: Vec<f64>,
    #[arg(long, default_value = "iree", value_parser = parse_objective)]
    objective: Objective,
    /// Shadowing standard deviation in dB applied when evaluating designs.
    #[arg(long = "shadowing-db")]
    shadowing_db: Option<f64>,
    /// Number of shadowing draws.
    #[arg(long)]
    draws: Option<usize>,
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    s.parse().map_err(|e: iree_core::Error| e.to_string())
}

/// `36e9`, `36G`, `500MHz`, `1.2 GHz`.
fn parse_hz(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let t = t.strip_suffix("Hz").or_else(|| t.strip_suffix("hz")).unwrap_or(t).trim_end();
    let (number, factor) = match t.chars().last() {
        Some('k' | 'K') => (&t[..t.len() - 1], 1e3),
        Some('M') => (&t[..t.len() - 1], 1e6),
        Some('G') => (&t[..t.len() - 1], 1e9),
        Some('T') => (&t[..t.len() - 1], 1e12),
        _ => (t, 1.0),
    };
    let value: f64 = number.trim().parse().map_err(|_| format!("invalid bandwidth '{s}'"))?;
    let hz = value * factor;
    if hz.is_finite() && hz > 0.0 {
        Ok(hz)
    } else {
        Err(format!("bandwidth must be positive, got '{s}'"))
    }
}

fn load_scenario(spec: &str) -> iree_core::Result<ScenarioConfig> {
    let path = PathBuf::from(spec);
    if path.exists() {
        return ScenarioConfig::load(&path);
    }
    match spec {
        "rural" => Ok(ScenarioConfig::rural()),
        "urban" => Ok(ScenarioConfig::urban()),
        _ => ScenarioConfig::load(&path),
    }
}

fn run_config(args: &CommonArgs) -> iree_core::Result<RunConfig> {
    let mut cfg = RunConfig::new(load_scenario(&args.scenario)?, &args.out);
    cfg.objective = args.objective;
    cfg.seeds = args.seeds.clone();
    cfg.sweep = if !args.pmax_dbw.is_empty() {
        Some(SweepAxis::PMaxDbw(args.pmax_dbw.clone()))
    } else if !args.bmax_hz.is_empty() {
        Some(SweepAxis::BMaxHz(args.bmax_hz.clone()))
    } else {
        None
    };
    if args.shadowing_db.is_some() || args.draws.is_some() {
        let base = cfg.shadowing.unwrap_or(ShadowingSpec {
            sigma_db: 0.0,
            draws: 1,
        });
        cfg.shadowing = Some(ShadowingSpec {
            sigma_db: args.shadowing_db.unwrap_or(base.sigma_db),
            draws: args.draws.unwrap_or(base.draws),
        });
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command) -> iree_core::Result<bool> {
    match command {
        Command::Optimize(args) => {
            let cfg = run_config(&args)?;
            if cfg.sweep.is_some() {
                eprintln!("note: optimize ignores sweep lists; use sweep or compare");
            }
            let reports = harness::run_optimize(&cfg)?;
            for r in &reports {
                println!(
                    "seed {}: eta {:.6e}, xi {:.4}, zeta {:.4}, P_T {:.3} W, converged {}, feasible {}, region {}",
                    r.seed,
                    r.eta,
                    r.metrics.xi,
                    r.metrics.zeta,
                    r.metrics.p_t,
                    r.converged,
                    r.feasible,
                    r.region.name()
                );
            }
            Ok(reports.iter().all(|r| r.success))
        }
        Command::Compare(args) => {
            let table = harness::run_compare(&run_config(&args)?)?;
            print!("{}", table.to_csv());
            Ok(table.rows.iter().all(|r| r.converged))
        }
        Command::Sweep(args) => {
            let rows = harness::run_sweep(&run_config(&args)?)?;
            print!("{}", harness::format_sweep_csv(&rows));
            Ok(rows.iter().all(|r| r.converged))
        }
        Command::Tradeoff(args) => {
            let rows = harness::run_tradeoff(&run_config(&args)?)?;
            print!("{}", harness::format_sweep_csv(&rows));
            Ok(rows.iter().all(|r| r.converged))
        }
        Command::GenTraffic(args) => {
            for path in harness::run_gen_traffic(&run_config(&args)?)? {
                println!("{}", path.display());
            }
            Ok(true)
        }
        Command::Validate(args) => {
            let report = harness::run_validate(&run_config(&args)?)?;
            for c in &report.checks {
                let status = if c.pass { "PASS" } else if c.gating { "FAIL" } else { "WARN" };
                println!("{status} {}: {}", c.name, c.detail);
            }
            Ok(report.pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
