use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neuro_irl::experiment::{
    read_csv, run_experiment, sweep, write_csv, write_csv_file, Algorithm, ExperimentConfig, ExperimentResult,
    RunRow, SweepAxis,
};
use neuro_irl::metrics::{summarize, two_tailed_t_test};
use neuro_irl::MdpKind;

const THREADS_ENV: &str = "NEURO_IRL_THREADS";

#[derive(Parser)]
#[command(name = "neuro-irl", version, about = "Neuroevolution IRL experiments on grid worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its per-run CSV.
    Run(Overrides),
    /// Run one experiment per value of a parameter axis; writes one long CSV.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        /// samples | pop | gens | goals
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, e.g. 1,2,3,4
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Welch t-test on the misprediction columns of two result CSVs.
    Compare { a: PathBuf, b: PathBuf },
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// JSON experiment manifest; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    determinism: Option<f64>,
    #[arg(long)]
    mdp_kind: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    sample_len: Option<usize>,
    #[arg(long)]
    pop: Option<usize>,
    #[arg(long)]
    gens: Option<usize>,
    #[arg(long)]
    goals: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> neuro_irl::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(a) = &self.algorithm {
            c.algorithm = a.parse::<Algorithm>()?;
        }
        if let Some(k) = &self.mdp_kind {
            c.mdp_kind = k.parse::<MdpKind>()?;
        }
        if let Some(v) = self.n {
            c.n = v;
        }
        if let Some(v) = self.determinism {
            c.determinism = v;
        }
        if let Some(v) = self.samples {
            c.n_samples = v;
        }
        if let Some(v) = self.sample_len {
            c.sample_len = v;
        }
        if let Some(v) = self.pop {
            c.evolution.pop_size = v;
        }
        if let Some(v) = self.gens {
            c.evolution.max_generations = v;
        }
        if let Some(v) = self.goals {
            c.goals = v;
            c.goal_states.clear();
        }
        if let Some(v) = self.runs {
            c.runs = v;
        }
        if let Some(v) = self.seed {
            c.base_seed = v;
        }
        if let Some(p) = &self.out {
            c.out = Some(p.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

fn configure_threads() {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return;
    };
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("warning: could not size thread pool: {e}");
            }
        }
        _ => eprintln!("warning: ignoring {THREADS_ENV}={raw:?}"),
    }
}

fn emit(rows: &[&RunRow], out: Option<&PathBuf>) -> neuro_irl::Result<()> {
    match out {
        Some(path) => write_csv_file(rows.iter().copied(), path),
        None => write_csv(rows.iter().copied(), std::io::stdout().lock()),
    }
}

fn report(result: &ExperimentResult) {
    for (run, err) in &result.failures {
        eprintln!("run {run} failed: {err}");
    }
    let s = &result.summary;
    eprintln!(
        "{} runs: mean misprediction {:.4} (std {:.4}, n = {}), {:.2}s total",
        result.rows.first().map_or_else(String::new, |r| r.algorithm.to_string()),
        s.mean,
        s.std,
        s.count,
        result.total_seconds()
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match cli.command {
        Command::Run(o) => {
            let config = match o.resolve() {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            let result = match run_experiment(&config) {
                Ok(r) => r,
                Err(e) => return config_error(e),
            };
            report(&result);
            if let Err(e) = emit(&result.rows.iter().collect::<Vec<_>>(), config.out.as_ref()) {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
            if result.all_failed() {
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Command::Sweep {
            overrides,
            axis,
            values,
        } => {
            let (config, axis) = match overrides.resolve().and_then(|c| Ok((c, SweepAxis::parse(&axis, values)?))) {
                Ok(pair) => pair,
                Err(e) => return config_error(e),
            };
            let results = match sweep(&config, &axis) {
                Ok(r) => r,
                Err(e) => return config_error(e),
            };
            for r in &results {
                report(r);
            }
            let rows: Vec<&RunRow> = results.iter().flat_map(|r| r.rows.iter()).collect();
            if let Err(e) = emit(&rows, config.out.as_ref()) {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
            if results.iter().all(ExperimentResult::all_failed) {
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Command::Compare { a, b } => compare_files(&a, &b),
    }
}

fn compare_files(a: &PathBuf, b: &PathBuf) -> ExitCode {
    let load = |p: &PathBuf| -> neuro_irl::Result<Vec<f64>> {
        let rows = read_csv(std::fs::File::open(p)?)?;
        Ok(rows.into_iter().filter_map(|r| r.misprediction).collect())
    };
    let (xa, xb) = match (load(a), load(b)) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return config_error(e),
    };
    let test = match two_tailed_t_test(&xa, &xb) {
        Ok(t) => t,
        Err(e) => return config_error(e),
    };
    let out = serde_json::json!({
        "a": summarize(&xa),
        "b": summarize(&xb),
        "t_test": test,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("plain JSON values"));
    ExitCode::SUCCESS
}

fn config_error(e: neuro_irl::Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}
