//! Misprediction scoring and Welch's two-tailed t-test.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::gridworld::NUM_ACTIONS;
use crate::solvers::Policy;

/// Fraction of states where a learned policy disagrees with the expert.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MispredictionScore(pub f64);

impl MispredictionScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn misprediction(learned: &Policy, expert: &Policy) -> Result<MispredictionScore> {
    if learned.len() != expert.len() {
        return Err(Error::LengthMismatch {
            expected: expert.len(),
            got: learned.len(),
        });
    }
    if expert.is_empty() {
        return Err(Error::Empty("policy"));
    }
    let wrong = learned
        .actions()
        .iter()
        .zip(expert.actions())
        .filter(|(a, b)| a != b)
        .count();
    Ok(MispredictionScore(wrong as f64 / expert.len() as f64))
}

/// Expected misprediction of a stochastic policy given as per-state action
/// distributions: `1 - mean_s pi(expert(s) | s)`.
pub fn misprediction_stochastic(learned: &[[f64; NUM_ACTIONS]], expert: &Policy) -> Result<MispredictionScore> {
    if learned.len() != expert.len() {
        return Err(Error::LengthMismatch {
            expected: expert.len(),
            got: learned.len(),
        });
    }
    if expert.is_empty() {
        return Err(Error::Empty("policy"));
    }
    let miss = running_mean(learned.iter().zip(expert.actions()).map(|(dist, a)| 1.0 - dist[a.index()]));
    Ok(MispredictionScore(miss))
}

/// Incremental mean; exact when every term is equal, so the uniform policy
/// scores exactly `1 - 1/5` for any state count.
fn running_mean(xs: impl Iterator<Item = f64>) -> f64 {
    let mut mean = 0.0;
    for (k, x) in xs.enumerate() {
        mean += (x - mean) / (k + 1) as f64;
    }
    mean
}

/// Uniform distribution over the five actions in every state.
pub fn uniform_random_policy(num_states: usize) -> Vec<[f64; NUM_ACTIONS]> {
    vec![[1.0 / NUM_ACTIONS as f64; NUM_ACTIONS]; num_states]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub std: f64,
    pub count: usize,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let count = xs.len();
    if count == 0 {
        return Summary {
            mean: f64::NAN,
            std: f64::NAN,
            count,
        };
    }
    let mean = xs.iter().sum::<f64>() / count as f64;
    let std = if count > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, std, count }
}

/// Two-sided p-value of Student's t with `dof` degrees of freedom,
/// `I_{dof / (dof + t^2)}(dof / 2, 1 / 2)`.
pub fn student_t_two_tailed_p(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(dof / 2.0, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0)
}

/// Welch's unequal-variance t-test.
pub fn two_tailed_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidParameter("each sample needs at least two values".into()));
    }
    let (sa, sb) = (summarize(a), summarize(b));
    let (va, vb) = (sa.std.powi(2) / a.len() as f64, sb.std.powi(2) / b.len() as f64);
    let diff = sa.mean - sb.mean;
    if va + vb == 0.0 {
        return Ok(if diff == 0.0 {
            TTestResult {
                t_statistic: 0.0,
                degrees_of_freedom: (a.len() + b.len() - 2) as f64,
                p_value: 1.0,
            }
        } else {
            TTestResult {
                t_statistic: diff.signum() * f64::INFINITY,
                degrees_of_freedom: (a.len() + b.len() - 2) as f64,
                p_value: 0.0,
            }
        });
    }
    let t = diff / (va + vb).sqrt();
    let dof = (va + vb).powi(2) / (va.powi(2) / (a.len() - 1) as f64 + vb.powi(2) / (b.len() - 1) as f64);
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: dof,
        p_value: student_t_two_tailed_p(t, dof),
    })
}
