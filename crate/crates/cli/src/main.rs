use std::path::PathBuf;
use std::process::ExitCode;

use c3::harness::{self, ExperimentConfig};
use c3::miqp::FullMiqpOptions;
use c3::projection::ProjectionMethod;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "c3", version, about = "Consensus complementarity control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Open-loop rollout of the configured model under a constant input.
    Simulate(Common),
    /// Closed-loop C3 trials.
    Control(Common),
    /// Full-horizon MIQP plans from each trial's initial state.
    Baseline(Common),
    /// Per-call projection timings and averaged cost-to-go.
    BenchProj {
        #[command(flatten)]
        common: Common,
        /// Projection calls to time per method.
        #[arg(long, default_value_t = 1000)]
        calls: usize,
        /// States at which the cost-to-go of each method is evaluated.
        #[arg(long, default_value_t = 20)]
        cost_samples: usize,
    },
    /// Cost-to-go of C3, the MIQP baseline and the realized trajectory.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory for CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// miqp, lcp or admm.
    #[arg(long)]
    projection: Option<String>,
}

impl Common {
    fn load(&self) -> c3::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(p) = &self.projection {
            ProjectionMethod::from_name(p)?;
            cfg.controller.projection = Some(p.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> c3::Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.load()?;
            let traj = harness::run_open_loop(&cfg, c.out.as_deref())?;
            let x = traj.final_state();
            println!("steps {}  final state {:?}  cost {:.6}", traj.len(), x.as_slice(), traj.total_cost());
        }
        Command::Control(c) => {
            let cfg = c.load()?;
            let table = harness::run_experiment(&cfg, c.out.as_deref())?;
            for t in &table.trials {
                println!(
                    "trial {:3}  stabilized {:5}  |x_T| {:.3e}  cost {:.4}  proj {:.4} ± {:.4} ms {}",
                    t.trial,
                    t.stabilized,
                    t.final_state_norm,
                    t.accumulated_cost,
                    t.projection_ms_mean,
                    t.projection_ms_std,
                    t.failure
                );
            }
            println!("stabilized {}/{}", table.stabilized_count(), table.trials.len());
        }
        Command::Baseline(c) => {
            let cfg = c.load()?;
            for r in harness::run_baseline(&cfg, &FullMiqpOptions::default(), c.out.as_deref())? {
                println!(
                    "trial {:3}  objective {:.6}  nodes {}  suboptimal {}  modes {}",
                    r.trial, r.objective, r.nodes, r.suboptimal, r.modes
                );
            }
        }
        Command::BenchProj {
            common,
            calls,
            cost_samples,
        } => {
            let cfg = common.load()?;
            let methods = match &common.projection {
                Some(p) => vec![ProjectionMethod::from_name(p)?],
                None => vec![ProjectionMethod::Lcp, ProjectionMethod::admm(), ProjectionMethod::miqp()],
            };
            let rows = harness::bench_projections(&cfg, &methods, calls, cost_samples)?;
            for r in &rows {
                println!(
                    "{:5}  {} calls  {:.3e} ± {:.3e} s  cost-to-go {:.4}",
                    r.method, r.calls, r.mean_s, r.std_s, r.avg_cost_to_go
                );
            }
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir)?;
                harness::write_bench_csv(&dir.join("bench_projections.csv"), &rows)?;
            }
        }
        Command::Compare(c) => {
            let cfg = c.load()?;
            let rows = harness::compare_cost_to_go(&cfg, &FullMiqpOptions::default())?;
            for r in &rows {
                println!(
                    "step {:4}  c3 {:.6}  baseline {:.6}  realized {:.6}",
                    r.step, r.c3, r.baseline, r.realized
                );
            }
            if let Some(dir) = &c.out {
                std::fs::create_dir_all(dir)?;
                harness::write_cost_to_go_csv(&dir.join("cost_to_go.csv"), &rows)?;
            }
        }
    }
    Ok(())
}

fn report(e: &c3::Error) {
    let msg = serde_json::json!({ "error": e.category(), "message": e.to_string() });
    eprintln!("{msg}");
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}
