use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use comp_energy::harness::verify::{run_suite, VerifyPlan};
use comp_energy::harness::{
    aggregate, emit_all, parse_algorithms, run_algorithm, run_experiment, window_average,
    ExperimentConfig, HarnessError,
};
use comp_energy::mtep::PlannerParams;
use comp_energy::par::is_parallel;
use comp_energy::scenario::{generate_trace, load_trace, save_trace, ScenarioError};
use comp_energy::twet::ControlError;

#[derive(Parser)]
#[command(
    name = "comp-energy",
    version,
    about = "Energy trading for smart-grid powered CoMP downlinks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a scenario trace and write it as JSON.
    GenTrace {
        #[command(flatten)]
        common: Common,
        /// Coarse intervals to draw (defaults to the config's horizon).
        #[arg(long)]
        intervals: Option<usize>,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run algorithms on a stored trace and print their metrics.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
        /// Comma-separated algorithms.
        #[arg(long, default_value = "twet")]
        algos: String,
        /// Directory for `<algorithm>.json` metric files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full sweep and write CSV, summary, plot and run sidecar.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Restrict the sweep to these algorithms.
        #[arg(long)]
        algos: Option<String>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override the number of seeds.
        #[arg(long)]
        seeds: Option<usize>,
        /// Write measured wall times instead of zeros into the CSV.
        #[arg(long)]
        record_runtime: bool,
    },
    /// Run the oracle-equivalence and invariant checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Smaller corpus for a quick smoke check.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON) or a preset name: battery, sinr, harvest.
    #[arg(long)]
    config: Option<String>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self, fallback: &str) -> Result<ExperimentConfig, HarnessError> {
        let name = self.config.as_deref().unwrap_or(fallback);
        let mut cfg = match ExperimentConfig::preset(name) {
            Some(c) if !Path::new(name).exists() => c,
            _ => ExperimentConfig::load(Path::new(name))?,
        };
        if let Some(seed) = self.seed {
            cfg.scenario.seed = seed;
        }
        Ok(cfg)
    }
}

enum Failure {
    Runtime(String),
    Verify,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<ControlError> for Failure {
    fn from(e: ControlError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let file =
        File::create(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(())
}

fn gen_trace(common: &Common, intervals: Option<usize>, out: &Path) -> Result<(), Failure> {
    let cfg = common.load("battery")?;
    let trace = generate_trace(
        &cfg.network,
        &cfg.scenario,
        intervals.unwrap_or(cfg.num_intervals),
    )?;
    let file =
        File::create(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    save_trace(&trace, BufWriter::new(file))?;
    println!(
        "{} slots, checksum {}",
        trace.num_slots(),
        trace.checksum()?
    );
    Ok(())
}

fn run(common: &Common, trace_path: &Path, algos: &str, out: Option<&Path>) -> Result<(), Failure> {
    let cfg = common.load("battery")?;
    let algorithms = parse_algorithms(algos).map_err(Failure::Runtime)?;
    let file = File::open(trace_path)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", trace_path.display())))?;
    let trace = load_trace(file)?;
    let planner = PlannerParams {
        seed: common.seed.unwrap_or(trace.params.seed),
        ..cfg.planner.clone()
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    let skip = cfg.warmup_intervals * trace.config.interval_len;
    for a in algorithms {
        let m = run_algorithm(a, &trace, &cfg.twet, &planner)?;
        println!(
            "{a}: avg_cost {:.6} (after warm-up {}), violations {}",
            m.avg_cost.unwrap_or(f64::NAN),
            window_average(&m.cost_series, skip).map_or("n/a".into(), |c| format!("{c:.6}")),
            m.violations.total()
        );
        if let Some(dir) = out {
            write_json(&dir.join(format!("{a}.json")), &m)?;
        }
    }
    Ok(())
}

fn sweep(
    common: &Common,
    out: Option<&Path>,
    algos: Option<&str>,
    jobs: usize,
    seeds: Option<usize>,
    record_runtime: bool,
) -> Result<(), Failure> {
    let mut cfg = common.load("battery")?;
    if let Some(list) = algos {
        cfg.algorithms = parse_algorithms(list).map_err(Failure::Runtime)?;
    }
    if let Some(n) = seeds {
        cfg.num_seeds = n;
    }
    if jobs > 1 && !is_parallel() {
        eprintln!("built without the `parallel` feature; running sequentially");
    }
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    eprintln!(
        "{}: {} values x {} seeds x {} algorithms",
        cfg.name,
        cfg.grid.len(),
        cfg.num_seeds,
        cfg.algorithms.len()
    );
    let table = run_experiment(&cfg, jobs)?;
    let files = emit_all(&table, &dir, record_runtime)?;
    for a in aggregate(&table.rows) {
        println!(
            "{} = {:<8} {:<8} {:.4} +/- {:.4} ({} runs)",
            cfg.axis.name(),
            a.axis_value,
            a.algorithm.name(),
            a.mean,
            a.stderr,
            a.count
        );
    }
    let failed: Vec<_> = table.failures().collect();
    for r in &failed {
        eprintln!(
            "failed: {} = {} seed {} {}: {}",
            cfg.axis.name(),
            r.axis_value,
            r.seed,
            r.algorithm,
            r.error.as_deref().unwrap_or("")
        );
    }
    println!("wrote {} and {}", files.csv.display(), files.plot.display());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "{} of {} runs failed",
            failed.len(),
            table.rows.len()
        )))
    }
}

fn verify(seed: u64, quick: bool) -> Result<(), Failure> {
    let plan = if quick {
        VerifyPlan {
            oracle_instances: 10,
            closed_form_instances: 10,
            subgradient_pairs: 50,
            feasibility_seeds: 1,
        }
    } else {
        VerifyPlan::default()
    };
    let checks = run_suite(seed, &plan);
    for c in &checks {
        println!("{c}");
    }
    let ok = checks.iter().filter(|c| c.ok()).count();
    println!("{ok}/{} checks passed", checks.len());
    if ok == checks.len() {
        Ok(())
    } else {
        Err(Failure::Verify)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::GenTrace {
            common,
            intervals,
            out,
        } => gen_trace(common, *intervals, out),
        Command::Run {
            common,
            trace,
            algos,
            out,
        } => run(common, trace, algos, out.as_deref()),
        Command::Sweep {
            common,
            out,
            algos,
            jobs,
            seeds,
            record_runtime,
        } => sweep(
            common,
            out.as_deref(),
            algos.as_deref(),
            *jobs,
            *seeds,
            *record_runtime,
        ),
        Command::Verify { seed, quick } => verify(*seed, *quick),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Verify) => ExitCode::from(3),
    }
}
