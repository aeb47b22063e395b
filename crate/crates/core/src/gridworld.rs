//! Grid world MDPs and their linearly-solvable counterparts.
//!
//! States are numbered row-major: `s = row * n + col`, with row 0 at the top.
//! Moving off the grid leaves the agent where it is.

use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::binary::BinaryMatrix;
use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};

pub type StateId = usize;

/// Sparse probability distribution over successor states, sorted by state.
pub type Distribution = Vec<(StateId, f64)>;

pub const NUM_ACTIONS: usize = 5;
pub const DEFAULT_GAMMA: f64 = 0.9;
pub const DEFAULT_COST_SCALE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Nothing,
}

impl Action {
    /// All actions in tie-break order.
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Nothing,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    /// Up and Down are opposites, as are Left and Right. Nothing has none.
    pub fn opposite(self) -> Option<Action> {
        match self {
            Action::Up => Some(Action::Down),
            Action::Down => Some(Action::Up),
            Action::Left => Some(Action::Right),
            Action::Right => Some(Action::Left),
            Action::Nothing => None,
        }
    }

    pub fn is_movement(self) -> bool {
        self != Action::Nothing
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Nothing => (0, 0),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Nothing => "nothing",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MdpKind {
    #[default]
    Standard,
    Linear,
}

impl fmt::Display for MdpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MdpKind::Standard => f.write_str("standard"),
            MdpKind::Linear => f.write_str("linear"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RewardMode {
    RandomPerMacroblock,
    ExplicitGoals(Vec<(StateId, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    /// Macroblock side length; all cells of a block share one reward.
    pub macroblock: usize,
    /// Probability that the selected action is the one taken.
    pub determinism: f64,
    pub mdp_kind: MdpKind,
    pub gamma: f64,
    pub reward_mode: RewardMode,
    pub seed: u64,
}

impl GridSpec {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            macroblock: 1,
            determinism: 1.0,
            mdp_kind: MdpKind::Standard,
            gamma: DEFAULT_GAMMA,
            reward_mode: RewardMode::RandomPerMacroblock,
            seed: 0,
        }
    }

    pub fn with_determinism(mut self, d: f64) -> Self {
        self.determinism = d;
        self
    }

    pub fn with_kind(mut self, kind: MdpKind) -> Self {
        self.mdp_kind = kind;
        self
    }

    pub fn with_goals(mut self, goals: Vec<(StateId, f64)>) -> Self {
        self.reward_mode = RewardMode::ExplicitGoals(goals);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_macroblock(mut self, b: usize) -> Self {
        self.macroblock = b;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn num_states(&self) -> usize {
        self.n * self.n
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::GridTooSmall(self.n));
        }
        if self.macroblock == 0 || !self.n.is_multiple_of(self.macroblock) {
            return Err(Error::InvalidMacroblock {
                n: self.n,
                block: self.macroblock,
            });
        }
        if !(0.0..=1.0).contains(&self.determinism) {
            return Err(Error::InvalidDeterminism(self.determinism));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidDiscount(self.gamma));
        }
        if let RewardMode::ExplicitGoals(goals) = &self.reward_mode {
            for &(s, _) in goals {
                if s >= self.num_states() {
                    return Err(Error::StateOutOfRange {
                        state: s,
                        num_states: self.num_states(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// A built grid world. Immutable once constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    spec: GridSpec,
    rewards: Vec<f64>,
    features: BinaryMatrix,
    /// `transitions[s][a]` is the successor distribution of action `a` in `s`.
    transitions: Vec<Vec<Distribution>>,
    passive_dynamics: Option<Vec<Distribution>>,
    state_costs: Option<Vec<f64>>,
}

impl GridWorld {
    pub fn build(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let rewards = match &spec.reward_mode {
            RewardMode::RandomPerMacroblock => random_macroblock_rewards(&spec),
            RewardMode::ExplicitGoals(goals) => {
                let mut r = vec![0.0; spec.num_states()];
                for &(s, value) in goals {
                    r[s] = value;
                }
                r
            }
        };
        let features = feature_matrix(spec.n);
        let transitions = transition_model(spec.n, spec.determinism);
        let mut world = Self {
            spec,
            rewards,
            features,
            transitions,
            passive_dynamics: None,
            state_costs: None,
        };
        if world.spec.mdp_kind == MdpKind::Linear {
            world = world.to_lmdp();
        }
        Ok(world)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn num_states(&self) -> usize {
        self.spec.n * self.spec.n
    }

    pub fn kind(&self) -> MdpKind {
        self.spec.mdp_kind
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    pub fn actions(&self) -> &'static [Action; NUM_ACTIONS] {
        &Action::ALL
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn features(&self) -> &BinaryMatrix {
        &self.features
    }

    pub fn feature_width(&self) -> usize {
        self.features.cols()
    }

    pub fn transition(&self, s: StateId, a: Action) -> &Distribution {
        &self.transitions[s][a.index()]
    }

    pub fn passive_dynamics(&self) -> Option<&[Distribution]> {
        self.passive_dynamics.as_deref()
    }

    pub fn state_costs(&self) -> Option<&[f64]> {
        self.state_costs.as_deref()
    }

    pub fn coords(&self, s: StateId) -> (usize, usize) {
        (s / self.spec.n, s % self.spec.n)
    }

    pub fn state_at(&self, row: usize, col: usize) -> StateId {
        row * self.spec.n + col
    }

    /// Successor of `a` in `s` when the action is carried out exactly.
    pub fn intended_successor(&self, s: StateId, a: Action) -> StateId {
        intended_successor(self.spec.n, s, a)
    }

    pub fn check_state(&self, s: StateId) -> Result<()> {
        if s < self.num_states() {
            Ok(())
        } else {
            Err(Error::StateOutOfRange {
                state: s,
                num_states: self.num_states(),
            })
        }
    }

    /// Thermometer-coded features of one state: the first `n - 1` entries
    /// encode the row, the last `n - 1` the column.
    pub fn state_features(&self, s: StateId) -> Result<Vec<bool>> {
        self.check_state(s)?;
        Ok(self.features.row(s).to_vec())
    }

    /// Same world with a different reward vector. Linear worlds get their
    /// state costs recomputed from the new rewards.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self> {
        if rewards.len() != self.num_states() {
            return Err(Error::LengthMismatch {
                expected: self.num_states(),
                got: rewards.len(),
            });
        }
        let mut world = self.clone();
        world.rewards = rewards;
        if world.state_costs.is_some() {
            world.state_costs = Some(costs_from_rewards(&world.rewards, DEFAULT_COST_SCALE));
        }
        Ok(world)
    }

    pub fn to_lmdp(&self) -> Self {
        self.to_lmdp_with_scale(DEFAULT_COST_SCALE)
    }

    /// Populates the linear-MDP view: `q(s) = -reward(s) * cost_scale` and
    /// passive dynamics uniform over the five exact successors.
    pub fn to_lmdp_with_scale(&self, cost_scale: f64) -> Self {
        let n = self.spec.n;
        let passive = (0..self.num_states())
            .map(|s| {
                let succ: Vec<StateId> = Action::ALL
                    .iter()
                    .map(|&a| intended_successor(n, s, a))
                    .collect();
                merge_counts(&succ, |count| count as f64 / NUM_ACTIONS as f64)
            })
            .collect();
        let mut world = self.clone();
        world.spec.mdp_kind = MdpKind::Linear;
        world.passive_dynamics = Some(passive);
        world.state_costs = Some(costs_from_rewards(&self.rewards, cost_scale));
        world
    }

    pub fn to_json(&self) -> WorldJson {
        let mut transitions = Vec::new();
        for s in 0..self.num_states() {
            for a in Action::ALL {
                for &(next, p) in self.transition(s, a) {
                    transitions.push((s, a, next, p));
                }
            }
        }
        WorldJson {
            n: self.spec.n,
            num_states: self.num_states(),
            mdp_kind: self.spec.mdp_kind,
            determinism: self.spec.determinism,
            gamma: self.spec.gamma,
            actions: Action::ALL.to_vec(),
            rewards: self.rewards.clone(),
            features: (0..self.num_states())
                .map(|s| self.features.row(s).iter().map(|&b| u8::from(b)).collect())
                .collect(),
            transitions,
            state_costs: self.state_costs.clone(),
        }
    }
}

/// Flat JSON view of a world: rewards, features and `(s, a, s', p)` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldJson {
    pub n: usize,
    pub num_states: usize,
    pub mdp_kind: MdpKind,
    pub determinism: f64,
    pub gamma: f64,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub features: Vec<Vec<u8>>,
    pub transitions: Vec<(StateId, Action, StateId, f64)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub state_costs: Option<Vec<f64>>,
}

fn costs_from_rewards(rewards: &[f64], cost_scale: f64) -> Vec<f64> {
    rewards.iter().map(|r| -r * cost_scale).collect()
}

pub(crate) fn intended_successor(n: usize, s: StateId, a: Action) -> StateId {
    let (row, col) = ((s / n) as isize, (s % n) as isize);
    let (dr, dc) = a.delta();
    let (nr, nc) = (row + dr, col + dc);
    if nr < 0 || nc < 0 || nr >= n as isize || nc >= n as isize {
        s
    } else {
        nr as usize * n + nc as usize
    }
}

/// Groups equal successors and maps each multiplicity through `prob`.
fn merge_counts(successors: &[StateId], prob: impl Fn(usize) -> f64) -> Distribution {
    let mut sorted = successors.to_vec();
    sorted.sort_unstable();
    let mut out: Distribution = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == s {
            j += 1;
        }
        out.push((s, prob(j - i)));
        i = j;
    }
    out
}

fn transition_model(n: usize, d: f64) -> Vec<Vec<Distribution>> {
    let random_share = (1.0 - d) / NUM_ACTIONS as f64;
    (0..n * n)
        .map(|s| {
            let succ: Vec<StateId> = Action::ALL
                .iter()
                .map(|&a| intended_successor(n, s, a))
                .collect();
            Action::ALL
                .iter()
                .map(|&a| {
                    let target = intended_successor(n, s, a);
                    // Probabilities are formed from (indicator, count) pairs so
                    // that actions with identical successor multisets get
                    // bit-identical distributions.
                    let mut dist: Distribution = merge_counts(&succ, |k| k as f64)
                        .into_iter()
                        .map(|(next, k)| {
                            let hit = if next == target { d } else { 0.0 };
                            (next, hit + random_share * k)
                        })
                        .filter(|&(_, p)| p > 0.0)
                        .collect();
                    dist.shrink_to_fit();
                    dist
                })
                .collect()
        })
        .collect()
}

fn feature_matrix(n: usize) -> BinaryMatrix {
    let width = 2 * (n - 1);
    BinaryMatrix::from_fn(n * n, width, |s, k| {
        let (row, col) = (s / n, s % n);
        if k < n - 1 {
            row > k
        } else {
            col > k - (n - 1)
        }
    })
}

fn random_macroblock_rewards(spec: &GridSpec) -> Vec<f64> {
    let mut rng = rng_from(spec.seed, &[stream::WORLD]);
    let blocks_per_side = spec.n / spec.macroblock;
    let mut block_rewards: Vec<f64> = (0..blocks_per_side * blocks_per_side)
        .map(|_| {
            if rng.random::<f64>() < 0.7 {
                0.0
            } else {
                rng.random_range(1..=10) as f64
            }
        })
        .collect();
    if block_rewards.iter().all(|&r| r == 0.0) {
        let pick = rng.random_range(0..block_rewards.len());
        block_rewards[pick] = rng.random_range(1..=10) as f64;
    }
    (0..spec.num_states())
        .map(|s| {
            let (row, col) = (s / spec.n, s % spec.n);
            let block = (row / spec.macroblock) * blocks_per_side + col / spec.macroblock;
            block_rewards[block]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn opposite_is_an_involution_on_movements() {
        for a in Action::ALL.into_iter().filter(|a| a.is_movement()) {
            assert_eq!(a.opposite().and_then(Action::opposite), Some(a));
        }
        assert_eq!(Action::Nothing.opposite(), None);
    }

    #[test]
    fn deterministic_world_has_point_masses() {
        let w = GridWorld::build(GridSpec::new(2).with_determinism(1.0)).unwrap();
        for s in 0..4 {
            for a in Action::ALL {
                let dist = w.transition(s, a);
                assert_eq!(dist.len(), 1);
                assert_eq!(dist[0], (w.intended_successor(s, a), 1.0));
            }
        }
    }

    #[test]
    fn n3_has_four_feature_columns() {
        let w = GridWorld::build(GridSpec::new(3)).unwrap();
        assert_eq!(w.feature_width(), 4);
    }

    #[test]
    fn explicit_goals_set_exactly_those_states() {
        let goals = vec![(0, 100.0), (5, 100.0), (10, 100.0), (15, 100.0)];
        let w = GridWorld::build(GridSpec::new(4).with_goals(goals)).unwrap();
        assert_eq!(w.rewards().iter().filter(|&&r| r == 100.0).count(), 4);
        assert_eq!(w.rewards().iter().filter(|&&r| r == 0.0).count(), 12);
    }

    #[test]
    fn rejects_bad_specs() {
        assert_eq!(
            GridWorld::build(GridSpec::new(1)).unwrap_err(),
            Error::GridTooSmall(1)
        );
        let err = GridWorld::build(GridSpec::new(4).with_goals(vec![(16, 1.0)])).unwrap_err();
        assert!(matches!(err, Error::StateOutOfRange { state: 16, .. }));
        assert!(GridWorld::build(GridSpec::new(4).with_macroblock(3)).is_err());
        assert!(GridWorld::build(GridSpec::new(4).with_determinism(1.5)).is_err());
        assert!(GridWorld::build(GridSpec::new(4).with_gamma(1.0)).is_err());
    }

    #[test]
    fn thermometer_corners() {
        let w = GridWorld::build(GridSpec::new(3)).unwrap();
        assert_eq!(w.state_features(0).unwrap(), vec![false; 4]);
        assert_eq!(w.state_features(8).unwrap(), vec![true; 4]);
        assert!(w.state_features(9).is_err());
    }

    #[test]
    fn features_consistent_along_rows_and_columns() {
        // Enumerate every pair of states of the 3x3 grid.
        let n = 3;
        let w = GridWorld::build(GridSpec::new(n)).unwrap();
        for a in 0..n * n {
            for b in 0..n * n {
                let (fa, fb) = (w.state_features(a).unwrap(), w.state_features(b).unwrap());
                let (ra, ca) = w.coords(a);
                let (rb, cb) = w.coords(b);
                if ra == rb {
                    assert_eq!(fa[..n - 1], fb[..n - 1]);
                }
                if ca == cb {
                    assert_eq!(fa[n - 1..], fb[n - 1..]);
                }
            }
        }
    }

    #[test]
    fn off_grid_moves_self_loop() {
        let w = GridWorld::build(GridSpec::new(3)).unwrap();
        assert_eq!(w.intended_successor(1, Action::Up), 1);
        assert_eq!(w.intended_successor(3, Action::Left), 3);
        assert_eq!(w.intended_successor(5, Action::Right), 5);
        assert_eq!(w.intended_successor(7, Action::Down), 7);
        assert_eq!(w.intended_successor(4, Action::Up), 1);
    }

    #[test]
    fn noisy_transition_probabilities() {
        let d = 0.7;
        let w = GridWorld::build(GridSpec::new(3).with_determinism(d)).unwrap();
        // Interior state, every successor distinct.
        let dist = w.transition(4, Action::Right);
        let p = |s: StateId| dist.iter().find(|e| e.0 == s).map_or(0.0, |e| e.1);
        assert_abs_diff_eq!(p(5), d + (1.0 - d) / 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p(1), (1.0 - d) / 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p(4), (1.0 - d) / 5.0, epsilon = 1e-15);
        // Top-left corner: Up, Left and Nothing all stay.
        let dist = w.transition(0, Action::Up);
        let p = |s: StateId| dist.iter().find(|e| e.0 == s).map_or(0.0, |e| e.1);
        assert_abs_diff_eq!(p(0), d + 3.0 * (1.0 - d) / 5.0, epsilon = 1e-15);
        // Up and Nothing in a corner are the same distribution, bit for bit.
        assert_eq!(w.transition(0, Action::Up), w.transition(0, Action::Nothing));
    }

    #[test]
    fn lmdp_costs_negate_rewards() {
        let w = GridWorld::build(GridSpec::new(2).with_goals(vec![(3, 100.0)])).unwrap();
        let l = w.to_lmdp();
        assert_eq!(l.kind(), MdpKind::Linear);
        assert_eq!(l.state_costs().unwrap(), &[0.0, 0.0, 0.0, -100.0]);
        let zero = GridWorld::build(GridSpec::new(2).with_goals(vec![])).unwrap().to_lmdp();
        assert!(zero.state_costs().unwrap().iter().all(|&q| q == 0.0));
    }

    #[test]
    fn lmdp_corner_passive_dynamics() {
        // n=2, state 0 (top-left): Up, Left, Nothing stay; Down -> 2; Right -> 1.
        let w = GridWorld::build(GridSpec::new(2)).unwrap().to_lmdp();
        let p = &w.passive_dynamics().unwrap()[0];
        assert_eq!(p, &vec![(0, 0.6), (1, 0.2), (2, 0.2)]);
    }

    #[test]
    fn random_rewards_constant_within_macroblocks() {
        for seed in 0..20 {
            let spec = GridSpec::new(8).with_macroblock(2).with_seed(seed);
            let w = GridWorld::build(spec).unwrap();
            for s in 0..64 {
                let (r, c) = w.coords(s);
                let anchor = w.state_at(r / 2 * 2, c / 2 * 2);
                assert_eq!(w.rewards()[s], w.rewards()[anchor]);
            }
            assert!(w.rewards().iter().any(|&r| r != 0.0));
            assert!(w.rewards().iter().all(|&r| r == 0.0 || (1.0..=10.0).contains(&r)));
        }
    }

    #[test]
    fn with_rewards_recomputes_costs() {
        let w = GridWorld::build(GridSpec::new(2).with_kind(MdpKind::Linear)).unwrap();
        let w2 = w.with_rewards(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(w2.state_costs().unwrap(), &[-1.0, -2.0, -3.0, -4.0]);
        assert!(w.with_rewards(vec![0.0]).is_err());
    }
}
