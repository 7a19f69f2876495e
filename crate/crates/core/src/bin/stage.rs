use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stage_core::harness::{self, ConfigOverrides, HarnessError, MetricsRow, PlanSummary};

/// Stability-guided exploration of contact-rich manipulation trajectories.
#[derive(Parser)]
#[command(name = "stage", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample and validate the stable set.
    SampleStable(ConfigOverrides),
    /// Grow a tree (or run a baseline) per seed and write paths and metrics.
    Plan(ConfigOverrides),
    /// Recompute metrics from the files of a finished plan run.
    Evaluate(ConfigOverrides),
    /// Build the path-count adjacency matrix and heatmap.
    Adjacency {
        #[command(flatten)]
        overrides: ConfigOverrides,
        /// Path files to accumulate; the configured run's files when omitted.
        #[arg(long, num_args = 1..)]
        paths: Vec<PathBuf>,
    },
    /// Run the ablation grid and sweeps.
    Ablate(ConfigOverrides),
}

fn print_row(r: &MetricsRow) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    println!(
        "{:<20} seed {:>5}  paths {:>8.1}  coverage {:>6.2}%  entropy {:>9}  hausdorff {:>7}",
        r.method,
        r.seed,
        r.path_count,
        r.coverage_pct,
        opt(r.entropy_nats),
        opt(r.avg_hausdorff)
    );
}

fn report(summary: &PlanSummary, per_row: bool) -> Result<(), HarnessError> {
    if per_row {
        summary.rows.iter().for_each(print_row);
    }
    print_row(&summary.mean);
    for f in &summary.files {
        println!("wrote {}", f.display());
    }
    for (seed, e) in &summary.failures {
        eprintln!("seed {seed} failed: {e}");
    }
    if summary.failures.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Runtime(format!("{} seed(s) failed", summary.failures.len())))
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::SampleStable(o) => {
            let config = o.resolve()?;
            let (states, stats) = harness::sample_stable(&config)?;
            println!(
                "{} stable states, {} attempts, success rate {:.3} per attempt",
                states.len(),
                stats.total_attempts(),
                stats.success_rate()
            );
            println!("solver failures {}, unstable rejections {}", stats.solver_failures, stats.unstable_rejections);
            let max = config.sampler.max_attempts_per_state;
            for b in [1, 10, 25, 50, 100, 200, 400, 800].into_iter().filter(|b| *b < max).chain([max]) {
                println!("found within {b:>4} attempts: {:>6.1}%", 100.0 * stats.found_within(b));
            }
            println!("wrote {}", config.stable_path().display());
            Ok(())
        }
        Command::Plan(o) => report(&harness::plan(&o.resolve()?)?, true),
        Command::Evaluate(o) => report(&harness::evaluate(&o.resolve()?)?, true),
        Command::Adjacency { overrides, paths } => {
            let config = overrides.resolve()?;
            let (a, files) = harness::adjacency_from_files(&config, &paths)?;
            println!("{} paths over {} stable states", a.row_sums().iter().sum::<u64>(), a.ids.len());
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Ablate(o) => report(&harness::ablate(&o.resolve()?)?, true),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
