//! Expert demonstrations sampled from an optimal policy.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, GridWorld, StateId};
use crate::rng::{rng_from, stream};
use crate::solvers::Policy;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub pairs: Vec<(StateId, Action)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    traces: Vec<Trace>,
    demo_states: Vec<StateId>,
}

impl Demonstration {
    pub fn new(traces: Vec<Trace>) -> Self {
        let mut demo_states: Vec<StateId> = traces
            .iter()
            .flat_map(|t| t.pairs.iter().map(|p| p.0))
            .collect();
        demo_states.sort_unstable();
        demo_states.dedup();
        Self { traces, demo_states }
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    /// Distinct demonstrated states, sorted.
    pub fn demo_states(&self) -> &[StateId] {
        &self.demo_states
    }

    pub fn pairs(&self) -> impl Iterator<Item = (StateId, Action)> + '_ {
        self.traces.iter().flat_map(|t| t.pairs.iter().copied())
    }

    /// One demonstrated action per distinct state (the first one seen).
    pub fn expert_actions(&self) -> BTreeMap<StateId, Action> {
        let mut out = BTreeMap::new();
        for (s, a) in self.pairs() {
            out.entry(s).or_insert(a);
        }
        out
    }

    pub fn validate(&self, world: &GridWorld) -> Result<()> {
        for (s, _) in self.pairs() {
            world.check_state(s)?;
        }
        Ok(())
    }

    /// One JSON array of `[state, action]` pairs per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for t in &self.traces {
            out.push_str(&serde_json::to_string(&t.pairs)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let traces = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map(|pairs| Trace { pairs }))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self::new(traces))
    }
}

/// Samples `n_samples` traces of `len` pairs. Each starts at a uniformly
/// random state and follows the expert's intended (noise-free) successors.
pub fn sample_demonstrations(
    world: &GridWorld,
    expert: &Policy,
    n_samples: usize,
    len: usize,
    seed: u64,
) -> Result<Demonstration> {
    if expert.len() != world.num_states() {
        return Err(Error::LengthMismatch {
            expected: world.num_states(),
            got: expert.len(),
        });
    }
    if n_samples == 0 || len == 0 {
        return Err(Error::InvalidParameter(
            "demonstrations need at least one trace of at least one step".into(),
        ));
    }
    let mut rng = rng_from(seed, &[stream::DEMO]);
    let traces = (0..n_samples)
        .map(|_| {
            let mut s = rng.random_range(0..world.num_states());
            let mut pairs = Vec::with_capacity(len);
            for _ in 0..len {
                let a = expert.action(s);
                pairs.push((s, a));
                s = world.intended_successor(s, a);
            }
            Trace { pairs }
        })
        .collect();
    Ok(Demonstration::new(traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::GridSpec;
    use crate::solvers::expert_policy;

    fn world_and_expert(seed: u64) -> (GridWorld, Policy) {
        let w = GridWorld::build(GridSpec::new(4).with_seed(seed)).unwrap();
        let p = expert_policy(&w).unwrap();
        (w, p)
    }

    #[test]
    fn one_step_traces_cover_at_most_a_quarter() {
        let (w, p) = world_and_expert(1);
        let d = sample_demonstrations(&w, &p, 4, 1, 9).unwrap();
        assert_eq!(d.traces().len(), 4);
        assert!(d.traces().iter().all(|t| t.pairs.len() == 1));
        assert!(d.demo_states().len() <= 4);
    }

    #[test]
    fn traces_follow_expert_and_dynamics() {
        for seed in 0..10 {
            let (w, p) = world_and_expert(seed);
            let d = sample_demonstrations(&w, &p, 4, 2, seed).unwrap();
            assert_eq!(d.traces().len(), 4);
            for t in d.traces() {
                assert_eq!(t.pairs.len(), 2);
                for win in t.pairs.windows(2) {
                    assert_eq!(w.intended_successor(win[0].0, win[0].1), win[1].0);
                }
                for &(s, a) in &t.pairs {
                    assert_eq!(a, p.action(s));
                }
            }
            assert!(d.demo_states().len() <= 8);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let (w, p) = world_and_expert(2);
        let a = sample_demonstrations(&w, &p, 8, 4, 77).unwrap();
        let b = sample_demonstrations(&w, &p, 8, 4, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_empty_requests() {
        let (w, p) = world_and_expert(2);
        assert!(sample_demonstrations(&w, &p, 0, 1, 0).is_err());
        assert!(sample_demonstrations(&w, &p, 1, 0, 0).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let (w, p) = world_and_expert(4);
        let d = sample_demonstrations(&w, &p, 3, 2, 5).unwrap();
        let text = d.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(Demonstration::from_jsonl(&text).unwrap(), d);
    }
}
