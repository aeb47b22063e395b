//! Bayesian reward sampling over composite features and aggregation of the
//! resulting per-iteration reward trace.
//!
//! Rewards decompose as `r = Phi w`, where each of the `K` composite features
//! is a conjunction of (possibly negated) atomic state features. A
//! Metropolis-Hastings chain over the feature assignment, negations, usage
//! mask, weights and usage rate records `r` once per iteration. The trace is
//! then collapsed either by its elementwise mean or by a NEAT network that
//! maps each state's reward history to a single reward.

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::binary::BinaryMatrix;
use crate::demos::Demonstration;
use crate::error::{Error, Result};
use crate::gridworld::{GridWorld, NUM_ACTIONS};
use crate::neat::{EvolutionParams, Genome, Network};
use crate::neat_irl::{evolve, perfect_fitness, policy_fitness, IrlResult};
use crate::rng::{rng_from, stream, Rng};
use crate::solvers::{log_sum_exp, policy_for_rewards, value_iteration_with_rewards, DEFAULT_MAX_ITERS, DEFAULT_VI_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerParams {
    /// Number of composite features.
    pub max_k: usize,
    /// Shape parameters of the Beta prior on the feature usage rate.
    pub kappa_beta: (f64, f64),
    /// Concentration of the unbounded feature prior; kept for configuration
    /// compatibility, unused with a fixed feature count.
    pub alpha: f64,
    /// Confidence that demonstrated actions are optimal.
    pub eta: f64,
    /// Recorded iterations (trace length).
    pub iterations: usize,
    /// Metropolis-Hastings proposals per recorded iteration.
    pub steps_per_iteration: usize,
    pub weight_prior_sigma: f64,
    /// Longest trace fed to a network; longer traces are subsampled.
    pub trace_cap: usize,
    pub seed: u64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            max_k: 8,
            kappa_beta: (1.0, 1.0),
            alpha: 1.0,
            eta: 1.0,
            iterations: 8,
            steps_per_iteration: 100,
            weight_prior_sigma: 1.0,
            trace_cap: 16,
            seed: 0,
        }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_k == 0 || self.iterations == 0 || self.steps_per_iteration == 0 || self.trace_cap == 0 {
            return Err(Error::InvalidParameter(
                "feature count, iterations, steps per iteration and trace cap must be at least 1".into(),
            ));
        }
        if self.eta.is_nan() || self.eta <= 0.0 || self.weight_prior_sigma.is_nan() || self.weight_prior_sigma <= 0.0 {
            return Err(Error::InvalidParameter("eta and the weight prior sigma must be positive".into()));
        }
        if !(self.kappa_beta.0 > 0.0 && self.kappa_beta.1 > 0.0) {
            return Err(Error::InvalidParameter("Beta prior parameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    /// `M x K`: atomic feature `i` takes part in composite feature `j`.
    pub z: BinaryMatrix,
    /// `M x K`: atomic feature `i` is negated inside composite feature `j`.
    pub u: BinaryMatrix,
    /// Atomic feature usage mask, length `M`.
    pub x: Vec<bool>,
    pub kappa: f64,
    pub w: Vec<f64>,
    /// `|S| x K` composite feature matrix.
    pub phi: BinaryMatrix,
    pub r: Vec<f64>,
}

impl SamplerState {
    fn refresh(&mut self, atomic: &BinaryMatrix) {
        self.phi = composite_features(&self.z, &self.u, &self.x, atomic);
        self.r = rewards_from(&self.phi, &self.w);
    }
}

/// `Phi(s, j)` is the conjunction over used atomic features `i` with
/// `Z(i, j) = 1` of `atomic(s, i) XOR U(i, j)`. An empty conjunction is true.
pub fn composite_features(z: &BinaryMatrix, u: &BinaryMatrix, x: &[bool], atomic: &BinaryMatrix) -> BinaryMatrix {
    assert_eq!(z.rows(), atomic.cols(), "Z rows must match the atomic feature count");
    assert_eq!((u.rows(), u.cols()), (z.rows(), z.cols()), "U must match Z");
    assert_eq!(x.len(), z.rows(), "X must match the atomic feature count");
    BinaryMatrix::from_fn(atomic.rows(), z.cols(), |s, j| {
        (0..z.rows())
            .filter(|&i| z.get(i, j) && x[i])
            .all(|i| atomic.get(s, i) ^ u.get(i, j))
    })
}

/// `r = Phi w`.
pub fn rewards_from(phi: &BinaryMatrix, w: &[f64]) -> Vec<f64> {
    (0..phi.rows())
        .map(|s| (0..phi.cols()).filter(|&j| phi.get(s, j)).map(|j| w[j]).sum())
        .collect()
}

/// Boltzmann log-likelihood of the demonstrated pairs under rewards `r`:
/// `sum eta Q(s,a) - logsumexp_a' eta Q(s,a')` with `Q` from value iteration.
pub fn demo_log_likelihood(r: &[f64], world: &GridWorld, demo: &Demonstration, eta: f64) -> Result<f64> {
    let (_, q) = value_iteration_with_rewards(world, r, DEFAULT_VI_TOL, DEFAULT_MAX_ITERS)?;
    Ok(demo
        .pairs()
        .map(|(s, a)| {
            let row = &q.0[s];
            let scaled = (0..NUM_ACTIONS).map(|k| eta * row[k]);
            eta * row[a.index()] - log_sum_exp(scaled)
        })
        .sum())
}

/// Metropolis-Hastings acceptance for a log acceptance ratio.
pub fn mh_accept(log_ratio: f64, rng: &mut Rng) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

fn ln_bernoulli(x: &[bool], kappa: f64) -> f64 {
    x.iter().map(|&b| if b { kappa.ln() } else { (-kappa).ln_1p() }).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Proposal {
    FlipZ,
    FlipU,
    FlipX,
    ResampleWeight,
    ResampleKappa,
}

impl Proposal {
    const ALL: [Proposal; 5] = [
        Proposal::FlipZ,
        Proposal::FlipU,
        Proposal::FlipX,
        Proposal::ResampleWeight,
        Proposal::ResampleKappa,
    ];
}

/// A single Metropolis-Hastings chain.
pub struct RewardSampler<'a> {
    world: &'a GridWorld,
    demo: &'a Demonstration,
    params: SamplerParams,
    state: SamplerState,
    log_likelihood: f64,
    weight_prior: Normal<f64>,
    kappa_prior: Beta<f64>,
    rng: Rng,
}

impl<'a> RewardSampler<'a> {
    /// Draws the initial state from the prior.
    pub fn new(world: &'a GridWorld, demo: &'a Demonstration, params: SamplerParams) -> Result<Self> {
        params.validate()?;
        demo.validate(world)?;
        let mut rng = rng_from(params.seed, &[stream::SAMPLER]);
        let weight_prior = Normal::new(0.0, params.weight_prior_sigma)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let kappa_prior = Beta::new(params.kappa_beta.0, params.kappa_beta.1)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let atomic = world.features();
        let (m, k) = (atomic.cols(), params.max_k);
        let kappa = kappa_prior.sample(&mut rng).clamp(1e-6, 1.0 - 1e-6);
        let z = BinaryMatrix::from_fn(m, k, |_, _| rng.random::<bool>());
        let u = BinaryMatrix::from_fn(m, k, |_, _| rng.random::<bool>());
        let x = (0..m).map(|_| rng.random::<f64>() < kappa).collect();
        let w = (0..k).map(|_| weight_prior.sample(&mut rng)).collect();
        let mut state = SamplerState {
            z,
            u,
            x,
            kappa,
            w,
            phi: BinaryMatrix::zeros(world.num_states(), k),
            r: Vec::new(),
        };
        state.refresh(atomic);
        let log_likelihood = demo_log_likelihood(&state.r, world, demo, params.eta)?;
        Ok(Self {
            world,
            demo,
            params,
            state,
            log_likelihood,
            weight_prior,
            kappa_prior,
            rng,
        })
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// One proposal and accept/reject decision. Returns whether it was accepted.
    pub fn step(&mut self) -> Result<bool> {
        let kind = Proposal::ALL[self.rng.random_range(0..Proposal::ALL.len())];
        self.step_with(kind)
    }

    pub fn step_with(&mut self, kind: Proposal) -> Result<bool> {
        let atomic = self.world.features();
        let (m, k) = (atomic.cols(), self.params.max_k);
        let mut proposal = self.state.clone();
        // log prior ratio plus proposal correction, excluding the likelihood.
        let mut log_ratio = 0.0;
        match kind {
            Proposal::FlipZ => proposal.z.flip(self.rng.random_range(0..m), self.rng.random_range(0..k)),
            Proposal::FlipU => proposal.u.flip(self.rng.random_range(0..m), self.rng.random_range(0..k)),
            Proposal::FlipX => {
                let i = self.rng.random_range(0..m);
                proposal.x[i] = !proposal.x[i];
                log_ratio += ln_bernoulli(&proposal.x, proposal.kappa) - ln_bernoulli(&self.state.x, self.state.kappa);
            }
            // Independence proposal from the prior: prior and proposal
            // densities cancel, leaving the likelihood ratio.
            Proposal::ResampleWeight => {
                let j = self.rng.random_range(0..k);
                proposal.w[j] = self.weight_prior.sample(&mut self.rng);
            }
            Proposal::ResampleKappa => {
                proposal.kappa = self.kappa_prior.sample(&mut self.rng).clamp(1e-6, 1.0 - 1e-6);
                log_ratio += ln_bernoulli(&proposal.x, proposal.kappa) - ln_bernoulli(&self.state.x, self.state.kappa);
            }
        }
        proposal.refresh(atomic);
        let log_likelihood = if proposal.r == self.state.r {
            self.log_likelihood
        } else {
            demo_log_likelihood(&proposal.r, self.world, self.demo, self.params.eta)?
        };
        log_ratio += log_likelihood - self.log_likelihood;
        let accepted = mh_accept(log_ratio, &mut self.rng);
        if accepted {
            self.state = proposal;
            self.log_likelihood = log_likelihood;
        }
        Ok(accepted)
    }

    /// Runs the configured number of iterations, recording `r` after each.
    pub fn run(mut self) -> Result<RewardTrace> {
        let mut iterations = Vec::with_capacity(self.params.iterations);
        for _ in 0..self.params.iterations {
            for _ in 0..self.params.steps_per_iteration {
                self.step()?;
            }
            iterations.push(self.state.r.clone());
        }
        Ok(RewardTrace { iterations })
    }
}

/// Reward vectors recorded once per sampler iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    pub iterations: Vec<Vec<f64>>,
}

impl RewardTrace {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.iterations.first().map_or(0, Vec::len)
    }

    /// Evenly spaced subsample of at most `cap` iterations, always keeping
    /// the last one.
    pub fn subsampled(&self, cap: usize) -> RewardTrace {
        let t = self.iterations.len();
        if t <= cap {
            return self.clone();
        }
        let iterations = (0..cap)
            .map(|j| self.iterations[(j + 1) * t / cap - 1].clone())
            .collect();
        RewardTrace { iterations }
    }

    /// Per-state history `(r1(s), ..., rT(s))`, one vector per state.
    pub fn per_state(&self) -> Vec<Vec<f64>> {
        (0..self.num_states())
            .map(|s| self.iterations.iter().map(|r| r[s]).collect())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn sample_reward_trace(world: &GridWorld, demo: &Demonstration, params: &SamplerParams) -> Result<RewardTrace> {
    RewardSampler::new(world, demo, params.clone())?.run()
}

/// Elementwise mean over iterations.
pub fn aggregate_mean(trace: &RewardTrace) -> Result<Vec<f64>> {
    if trace.is_empty() {
        return Err(Error::Empty("reward trace"));
    }
    let t = trace.len() as f64;
    let mut mean = vec![0.0; trace.num_states()];
    for r in &trace.iterations {
        if r.len() != mean.len() {
            return Err(Error::LengthMismatch {
                expected: mean.len(),
                got: r.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= t;
    }
    Ok(mean)
}

fn network_rewards(net: &Network, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut buf = Vec::new();
    inputs.iter().map(|x| net.activate_with(x, &mut buf)).collect()
}

/// Evolves networks that map each state's reward history to a single reward.
/// A network's reward vector is solved on the world (value iteration or the
/// linear solver, per world kind) and scored against the demonstration.
pub fn run_bnp_neat(
    world: &GridWorld,
    demo: &Demonstration,
    trace: &RewardTrace,
    evolution: &EvolutionParams,
) -> Result<IrlResult> {
    demo.validate(world)?;
    if trace.is_empty() {
        return Err(Error::Empty("reward trace"));
    }
    if trace.num_states() != world.num_states() {
        return Err(Error::LengthMismatch {
            expected: world.num_states(),
            got: trace.num_states(),
        });
    }
    let inputs = trace.per_state();
    let fitness = |g: &Genome| -> f64 {
        // A reward vector the solver cannot handle scores as worst.
        Network::from_genome(g)
            .and_then(|net| network_rewards(&net, &inputs))
            .and_then(|r| policy_for_rewards(world, &r))
            .map_or(0.0, |(_, p)| policy_fitness(&p, demo))
    };
    let outcome = evolve(trace.len(), evolution, Some(perfect_fitness(demo)), fitness, None)?;
    let net = Network::from_genome(&outcome.best)?;
    let rewards = network_rewards(&net, &inputs)?;
    let (values, policy) = policy_for_rewards(world, &rewards)?;
    Ok(IrlResult {
        best_genome: outcome.best,
        learned_values: values,
        learned_policy: policy,
        learned_rewards: Some(rewards),
        generations_run: outcome.generations_run,
        terminated_early: outcome.terminated_early,
        fitness_history: outcome.history,
    })
}
