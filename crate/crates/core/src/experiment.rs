//! Seeded batch experiments: build a world per run, solve the expert, sample a
//! demonstration, run one learner and score its policy.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demos::sample_demonstrations;
use crate::error::{Error, Result};
use crate::gridworld::{GridSpec, GridWorld, MdpKind, RewardMode, DEFAULT_GAMMA};
use crate::metrics::{misprediction, summarize, two_tailed_t_test, Summary, TTestResult};
use crate::neat::EvolutionParams;
use crate::neat_irl::{run_neat_irl, IrlConfig};
use crate::reward_trace::{aggregate_mean, run_bnp_neat, sample_reward_trace, SamplerParams};
use crate::rng::{rng_from, stream};
use crate::solvers::{expert_policy, policy_for_rewards};

pub const CSV_HEADER: &str =
    "run,seed,algorithm,n,d,mdp_kind,n_samples,sample_len,pop,gens,goals,misprediction,seconds,generations_run,terminated_early";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[default]
    NeatIrl,
    BnpMean,
    BnpNeat,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::NeatIrl => "neat-irl",
            Algorithm::BnpMean => "bnp-mean",
            Algorithm::BnpNeat => "bnp-neat",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "neat-irl" | "neatirl" => Ok(Algorithm::NeatIrl),
            "bnp-mean" | "bnpmean" => Ok(Algorithm::BnpMean),
            "bnp-neat" | "bnpneat" => Ok(Algorithm::BnpNeat),
            other => Err(Error::InvalidParameter(format!("unknown algorithm '{other}'"))),
        }
    }
}

impl FromStr for MdpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(MdpKind::Standard),
            "linear" => Ok(MdpKind::Linear),
            other => Err(Error::InvalidParameter(format!("unknown MDP kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub n: usize,
    pub macroblock: usize,
    pub determinism: f64,
    pub mdp_kind: MdpKind,
    pub gamma: f64,
    /// Number of randomly placed goals; 0 keeps random macroblock rewards.
    pub goals: usize,
    /// Explicit goal states; overrides `goals` when non-empty.
    pub goal_states: Vec<usize>,
    pub goal_reward: f64,
    pub n_samples: usize,
    pub sample_len: usize,
    pub evolution: EvolutionParams,
    pub sampler: SamplerParams,
    pub early_stop: bool,
    pub runs: usize,
    pub base_seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::NeatIrl,
            n: 4,
            macroblock: 1,
            determinism: 1.0,
            mdp_kind: MdpKind::Standard,
            gamma: DEFAULT_GAMMA,
            goals: 0,
            goal_states: Vec::new(),
            goal_reward: 100.0,
            n_samples: 4,
            sample_len: 1,
            evolution: EvolutionParams::default(),
            sampler: SamplerParams::default(),
            early_stop: true,
            runs: 25,
            base_seed: 0,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn goal_count(&self) -> usize {
        if self.goal_states.is_empty() {
            self.goals
        } else {
            self.goal_states.len()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidParameter("runs must be at least 1".into()));
        }
        if self.n_samples == 0 || self.sample_len == 0 {
            return Err(Error::InvalidParameter("sample count and length must be at least 1".into()));
        }
        self.grid_spec(self.base_seed)?.validate()?;
        if self.goal_states.is_empty() && self.goals > self.n * self.n {
            return Err(Error::InvalidParameter(format!(
                "{} goals do not fit in {} states",
                self.goals,
                self.n * self.n
            )));
        }
        self.evolution.validate()?;
        self.sampler.validate()?;
        Ok(())
    }

    /// Grid specification for the run seeded with `seed`.
    pub fn grid_spec(&self, seed: u64) -> Result<GridSpec> {
        let num_states = self.n * self.n;
        let reward_mode = if !self.goal_states.is_empty() {
            RewardMode::ExplicitGoals(self.goal_states.iter().map(|&s| (s, self.goal_reward)).collect())
        } else if self.goals > 0 {
            if self.goals > num_states {
                return Err(Error::InvalidParameter(format!("{} goals do not fit in {num_states} states", self.goals)));
            }
            let mut rng = rng_from(seed, &[stream::GOALS]);
            let mut states = sample(&mut rng, num_states, self.goals).into_vec();
            states.sort_unstable();
            RewardMode::ExplicitGoals(states.into_iter().map(|s| (s, self.goal_reward)).collect())
        } else {
            RewardMode::RandomPerMacroblock
        };
        Ok(GridSpec {
            n: self.n,
            macroblock: self.macroblock,
            determinism: self.determinism,
            mdp_kind: self.mdp_kind,
            gamma: self.gamma,
            reward_mode,
            seed,
        })
    }
}

/// One CSV row. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub n: usize,
    pub d: f64,
    pub mdp_kind: MdpKind,
    pub n_samples: usize,
    pub sample_len: usize,
    pub pop: usize,
    pub gens: usize,
    pub goals: usize,
    /// Empty when the run failed.
    pub misprediction: Option<f64>,
    pub seconds: f64,
    pub generations_run: usize,
    pub terminated_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rows: Vec<RunRow>,
    /// Aggregate over successful runs only.
    pub summary: Summary,
    /// Error message per failed run index.
    pub failures: Vec<(usize, String)>,
}

impl ExperimentResult {
    pub fn mispredictions(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.misprediction).collect()
    }

    pub fn all_failed(&self) -> bool {
        self.summary.count == 0
    }

    pub fn early_termination_rate(&self) -> f64 {
        let ok: Vec<&RunRow> = self.rows.iter().filter(|r| r.misprediction.is_some()).collect();
        if ok.is_empty() {
            return 0.0;
        }
        ok.iter().filter(|r| r.terminated_early).count() as f64 / ok.len() as f64
    }

    pub fn total_seconds(&self) -> f64 {
        self.rows.iter().map(|r| r.seconds).sum()
    }
}

struct RunOutcome {
    misprediction: f64,
    seconds: f64,
    generations_run: usize,
    terminated_early: bool,
}

fn run_once(config: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    let world = GridWorld::build(config.grid_spec(seed)?)?;
    let expert = expert_policy(&world)?;
    let demo = sample_demonstrations(&world, &expert, config.n_samples, config.sample_len, seed)?;
    let evolution = EvolutionParams {
        seed,
        ..config.evolution.clone()
    };
    let sampler = SamplerParams {
        seed,
        ..config.sampler.clone()
    };

    let start = Instant::now();
    let (policy, generations_run, terminated_early) = match config.algorithm {
        Algorithm::NeatIrl => {
            let irl = IrlConfig {
                evolution,
                world: &world,
                demo: &demo,
                early_stop: config.early_stop,
            };
            let res = run_neat_irl(&irl)?;
            (res.learned_policy, res.generations_run, res.terminated_early)
        }
        Algorithm::BnpMean => {
            let trace = sample_reward_trace(&world, &demo, &sampler)?;
            let (_, policy) = policy_for_rewards(&world, &aggregate_mean(&trace)?)?;
            (policy, 0, false)
        }
        Algorithm::BnpNeat => {
            let trace = sample_reward_trace(&world, &demo, &sampler)?.subsampled(sampler.trace_cap);
            let res = run_bnp_neat(&world, &demo, &trace, &evolution)?;
            (res.learned_policy, res.generations_run, res.terminated_early)
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    Ok(RunOutcome {
        misprediction: misprediction(&policy, &expert)?.value(),
        seconds,
        generations_run,
        terminated_early,
    })
}

/// Runs `config.runs` independent runs with seeds `base_seed + i`. Runs
/// execute in parallel; rows come back in run order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let outcomes: Vec<(usize, u64, Result<RunOutcome>)> = (0..config.runs)
        .into_par_iter()
        .map(|i| {
            let seed = config.base_seed.wrapping_add(i as u64);
            (i, seed, run_once(config, seed))
        })
        .collect();
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (run, seed, outcome) in outcomes {
        let mut row = RunRow {
            run,
            seed,
            algorithm: config.algorithm,
            n: config.n,
            d: config.determinism,
            mdp_kind: config.mdp_kind,
            n_samples: config.n_samples,
            sample_len: config.sample_len,
            pop: config.evolution.pop_size,
            gens: config.evolution.max_generations,
            goals: config.goal_count(),
            misprediction: None,
            seconds: 0.0,
            generations_run: 0,
            terminated_early: false,
        };
        match outcome {
            Ok(o) => {
                row.misprediction = Some(o.misprediction);
                row.seconds = o.seconds;
                row.generations_run = o.generations_run;
                row.terminated_early = o.terminated_early;
            }
            Err(e) => failures.push((run, e.to_string())),
        }
        rows.push(row);
    }
    let summary = summarize(&rows.iter().filter_map(|r| r.misprediction).collect::<Vec<_>>());
    Ok(ExperimentResult { rows, summary, failures })
}

/// Welch's t-test on the misprediction columns of two results.
pub fn compare(a: &ExperimentResult, b: &ExperimentResult) -> Result<TTestResult> {
    two_tailed_t_test(&a.mispredictions(), &b.mispredictions())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SweepAxis {
    NSamples(Vec<usize>),
    Pop(Vec<usize>),
    Gens(Vec<usize>),
    Goals(Vec<usize>),
}

impl SweepAxis {
    pub fn parse(name: &str, values: Vec<usize>) -> Result<Self> {
        match name {
            "samples" | "n_samples" | "n-samples" => Ok(SweepAxis::NSamples(values)),
            "pop" => Ok(SweepAxis::Pop(values)),
            "gens" => Ok(SweepAxis::Gens(values)),
            "goals" => Ok(SweepAxis::Goals(values)),
            other => Err(Error::InvalidParameter(format!("unknown sweep axis '{other}'"))),
        }
    }

    pub fn values(&self) -> &[usize] {
        match self {
            SweepAxis::NSamples(v) | SweepAxis::Pop(v) | SweepAxis::Gens(v) | SweepAxis::Goals(v) => v,
        }
    }

    pub fn apply(&self, template: &ExperimentConfig, value: usize) -> ExperimentConfig {
        let mut c = template.clone();
        match self {
            SweepAxis::NSamples(_) => c.n_samples = value,
            SweepAxis::Pop(_) => c.evolution.pop_size = value,
            SweepAxis::Gens(_) => c.evolution.max_generations = value,
            SweepAxis::Goals(_) => {
                c.goals = value;
                c.goal_states.clear();
            }
        }
        c
    }
}

/// One experiment per axis value, in axis order.
pub fn sweep(template: &ExperimentConfig, axis: &SweepAxis) -> Result<Vec<ExperimentResult>> {
    if axis.values().is_empty() {
        return Err(Error::InvalidParameter("sweep axis has no values".into()));
    }
    axis.values()
        .iter()
        .map(|&v| run_experiment(&axis.apply(template, v)))
        .collect()
}

/// Writes rows under the fixed CSV header.
pub fn write_csv<'a, W: Write>(rows: impl IntoIterator<Item = &'a RunRow>, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file<'a>(rows: impl IntoIterator<Item = &'a RunRow>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(rows, std::io::BufWriter::new(file))
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<RunRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let rows = r.deserialize().collect::<std::result::Result<Vec<RunRow>, _>>()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(algorithm: Algorithm) -> ExperimentConfig {
        ExperimentConfig {
            algorithm,
            runs: 3,
            evolution: EvolutionParams {
                pop_size: 10,
                max_generations: 5,
                ..EvolutionParams::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn header_matches_row_serialization() {
        let res = run_experiment(&quick(Algorithm::NeatIrl)).unwrap();
        let mut buf = Vec::new();
        write_csv(&res.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(text.lines().count(), 4);
        assert_eq!(read_csv(text.as_bytes()).unwrap(), res.rows);
    }

    #[test]
    fn row_count_and_summary() {
        let res = run_experiment(&quick(Algorithm::BnpMean)).unwrap();
        assert_eq!(res.rows.len(), 3);
        let ms = res.mispredictions();
        let mean = ms.iter().sum::<f64>() / ms.len() as f64;
        assert!((res.summary.mean - mean).abs() < 1e-12);
        assert_eq!(res.rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn random_goals_are_distinct_and_seeded() {
        let c = ExperimentConfig {
            goals: 4,
            ..ExperimentConfig::default()
        };
        let RewardMode::ExplicitGoals(goals) = c.grid_spec(9).unwrap().reward_mode else {
            panic!("expected goals");
        };
        assert_eq!(goals.len(), 4);
        let mut states: Vec<usize> = goals.iter().map(|g| g.0).collect();
        states.dedup();
        assert_eq!(states.len(), 4);
        assert_eq!(c.grid_spec(9).unwrap(), c.grid_spec(9).unwrap());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ExperimentConfig {
            runs: 0,
            ..ExperimentConfig::default()
        };
        assert!(run_experiment(&c).is_err());
        c.runs = 1;
        c.goals = 17;
        assert!(run_experiment(&c).is_err());
        c.goals = 0;
        c.n = 1;
        assert!(run_experiment(&c).is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!("bnp-neat".parse::<Algorithm>().unwrap(), Algorithm::BnpNeat);
        assert_eq!("NeatIrl".parse::<Algorithm>().unwrap(), Algorithm::NeatIrl);
        assert_eq!("linear".parse::<MdpKind>().unwrap(), MdpKind::Linear);
        assert!("gpirl".parse::<Algorithm>().is_err());
        assert!(SweepAxis::parse("depth", vec![1]).is_err());
    }

    #[test]
    fn sweep_one_result_per_value() {
        let t = quick(Algorithm::NeatIrl);
        let res = sweep(&t, &SweepAxis::NSamples(vec![1, 2])).unwrap();
        assert_eq!(res.len(), 2);
        assert_eq!(res[1].rows[0].n_samples, 2);
        assert!(sweep(&t, &SweepAxis::Pop(vec![])).is_err());
    }
}
