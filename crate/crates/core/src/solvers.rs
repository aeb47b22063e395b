//! Optimal values and greedy policies for standard and linear grid MDPs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, Distribution, GridWorld, NUM_ACTIONS};

pub const DEFAULT_VI_TOL: f64 = 1e-10;
pub const DEFAULT_LMDP_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction(pub Vec<f64>);

impl ValueFunction {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// `Q(s, a)` for all states, actions indexed by [`Action::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFunction(pub Vec<[f64; NUM_ACTIONS]>);

impl QFunction {
    pub fn get(&self, s: usize, a: Action) -> f64 {
        self.0[s][a.index()]
    }

    pub fn num_states(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy(pub Vec<Action>);

impl Policy {
    pub fn actions(&self) -> &[Action] {
        &self.0
    }

    pub fn action(&self, s: usize) -> Action {
        self.0[s]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmdpSolution {
    /// Desirability, normalised to unit sup-norm.
    pub z: Vec<f64>,
    /// `ln z`; defined up to an additive constant, maximum is 0.
    pub v: Vec<f64>,
    /// Controlled successor distribution, proportional to `p(s'|s) z(s')`.
    pub policy_dist: Vec<Distribution>,
    /// Optimal average cost per step; `exp(c - q) * (P z) = z` at the fixed point.
    pub average_cost: f64,
    pub iterations: usize,
    pub residual: f64,
}

fn bellman_backup(world: &GridWorld, rewards: &[f64], v: &[f64], s: usize) -> [f64; NUM_ACTIONS] {
    let gamma = world.gamma();
    let mut q = [0.0; NUM_ACTIONS];
    for a in Action::ALL {
        let expected: f64 = world.transition(s, a).iter().map(|&(t, p)| p * v[t]).sum();
        q[a.index()] = rewards[s] + gamma * expected;
    }
    q
}

fn max_of(q: &[f64; NUM_ACTIONS]) -> f64 {
    q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Value iteration with rewards on states:
/// `v(s) = max_a [R(s) + gamma * sum_s' theta(s'|s,a) v(s')]`.
pub fn value_iteration(world: &GridWorld, tol: f64, max_iters: usize) -> Result<(ValueFunction, QFunction)> {
    value_iteration_with_rewards(world, world.rewards(), tol, max_iters)
}

/// Value iteration on `world`'s dynamics with a substitute reward vector.
pub fn value_iteration_with_rewards(
    world: &GridWorld,
    rewards: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<(ValueFunction, QFunction)> {
    let n = world.num_states();
    if rewards.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: rewards.len(),
        });
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        residual = 0.0;
        for s in 0..n {
            next[s] = max_of(&bellman_backup(world, rewards, &v, s));
            residual = f64::max(residual, (next[s] - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if residual < tol {
            let q = (0..n).map(|s| bellman_backup(world, rewards, &v, s)).collect();
            return Ok((ValueFunction(v), QFunction(q)));
        }
    }
    Err(Error::NotConverged {
        solver: "value iteration",
        iterations: max_iters,
        residual,
    })
}

/// Index of the largest score; ties go to the earliest action in
/// [`Action::ALL`] order.
pub(crate) fn argmax_action(scores: impl IntoIterator<Item = f64>) -> Action {
    let mut best = (Action::Up, f64::NEG_INFINITY);
    for (a, score) in Action::ALL.into_iter().zip(scores) {
        if score > best.1 {
            best = (a, score);
        }
    }
    best.0
}

pub fn extract_greedy_policy(q: &QFunction) -> Policy {
    Policy(q.0.iter().map(|row| argmax_action(row.iter().copied())).collect())
}

/// Solves the average-cost linear Bellman equation by power iteration on
/// `G = diag(exp(-q)) P`, renormalising to unit sup-norm every step.
///
/// The iteration runs in log space so that large cost spreads neither
/// overflow nor flush desirabilities to zero.
pub fn solve_lmdp(world: &GridWorld, tol: f64, max_iters: usize) -> Result<LmdpSolution> {
    let costs = world.state_costs().ok_or(Error::NotLinear)?;
    solve_lmdp_with_costs(world, costs, tol, max_iters)
}

pub fn solve_lmdp_with_costs(
    world: &GridWorld,
    costs: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<LmdpSolution> {
    let passive = world.passive_dynamics().ok_or(Error::NotLinear)?;
    let n = world.num_states();
    if costs.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: costs.len(),
        });
    }
    for (s, row) in passive.iter().enumerate() {
        let mass: f64 = row.iter().map(|e| e.1).sum();
        if row.is_empty() || mass <= 0.0 {
            return Err(Error::EmptyPassiveRow(s));
        }
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let log_passive: Vec<Vec<(usize, f64)>> = passive
        .iter()
        .map(|row| row.iter().map(|&(t, p)| (t, p.ln())).collect())
        .collect();

    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iters {
        for s in 0..n {
            next[s] = -costs[s] + log_sum_exp(log_passive[s].iter().map(|&(t, lp)| lp + v[t]));
        }
        if iter % REFINE_EVERY == 0 {
            // Upper Collatz-Wielandt bound on the Perron root, in log space.
            let log_shift = (0..n).map(|s| next[s] - v[s]).fold(f64::NEG_INFINITY, f64::max);
            if let Some(refined) = shift_invert_step(passive, costs, &v, log_shift) {
                v = refined;
                continue;
            }
        }
        let log_lambda = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        residual = 0.0;
        let mut log_step: f64 = 0.0;
        for s in 0..n {
            next[s] -= log_lambda;
            residual = f64::max(residual, (next[s].exp() - v[s].exp()).abs());
            log_step = log_step.max((next[s] - v[s]).abs());
        }
        // residual = |G z / lambda - z|_inf, the linear Bellman residual of v.
        // The log-space step must settle too: states with tiny z barely move
        // the residual but still decide the greedy policy around them.
        if residual < tol && log_step < tol {
            let z: Vec<f64> = v.iter().map(|x| x.exp()).collect();
            let policy_dist = controlled_dynamics(passive, &z);
            return Ok(LmdpSolution {
                z,
                v,
                policy_dist,
                average_cost: -log_lambda,
                iterations: iter,
                residual,
            });
        }
        std::mem::swap(&mut v, &mut next);
    }
    Err(Error::NotConverged {
        solver: "lmdp power iteration",
        iterations: max_iters,
        residual,
    })
}

/// Power iterations between shift-and-invert refinements. Two nearly equal
/// wells of desirability give a spectral gap too small for plain power
/// iteration to close in reasonable time.
const REFINE_EVERY: usize = 200;

/// Smallest per-step correction factor trusted from one refinement; smaller
/// computed factors are round-off and are clamped here, so each refinement
/// moves a state at most this far.
const REFINE_FLOOR: f64 = 1e-8;

/// One inverse-iteration step with shift `mu` at or above the Perron root,
/// carried out in the basis scaled by the current estimate `z = exp(v)`.
///
/// The scaled matrix `M(s, t) = G(s, t) z(t) / (mu z(s))` is nonnegative with
/// row sums at most 1, so `(M - I) y = 1` is well conditioned and `y` is the
/// per-state correction factor. Working with corrections rather than `z`
/// itself keeps states with tiny desirability from drowning in round-off.
fn shift_invert_step(passive: &[Distribution], costs: &[f64], v: &[f64], log_shift: f64) -> Option<Vec<f64>> {
    let n = v.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (s, row) in passive.iter().enumerate() {
        for &(t, p) in row {
            a[(s, t)] += p * (-costs[s] - log_shift + v[t] - v[s]).exp();
        }
        // Nudge the shift strictly above the root so the system stays solvable.
        a[(s, s)] -= 1.0 + 1e-14;
    }
    let y = a.lu().solve(&DVector::from_element(n, -1.0))?;
    let m = y.iter().copied().fold(0.0, f64::max);
    if !(m.is_finite() && m > 0.0) {
        return None;
    }
    let refined: Vec<f64> = y
        .iter()
        .zip(v)
        .map(|(&yi, &old)| old + (yi / m).max(REFINE_FLOOR).ln())
        .collect();
    let top = refined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(refined.into_iter().map(|x| x - top).collect())
}

/// `|| z - exp(c - q) (P z) ||_inf` for a candidate solution.
pub fn lmdp_residual(world: &GridWorld, costs: &[f64], sol: &LmdpSolution) -> Result<f64> {
    let passive = world.passive_dynamics().ok_or(Error::NotLinear)?;
    let mut worst: f64 = 0.0;
    for (s, row) in passive.iter().enumerate() {
        let pz: f64 = row.iter().map(|&(t, p)| p * sol.z[t]).sum();
        let rhs = (sol.average_cost - costs[s]).exp() * pz;
        worst = worst.max((sol.z[s] - rhs).abs());
    }
    Ok(worst)
}

fn controlled_dynamics(passive: &[Distribution], z: &[f64]) -> Vec<Distribution> {
    passive
        .iter()
        .map(|row| {
            let total: f64 = row.iter().map(|&(t, p)| p * z[t]).sum();
            row.iter().map(|&(t, p)| (t, p * z[t] / total)).collect()
        })
        .collect()
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Maps the controlled LMDP onto the five actions: each state takes the
/// action whose exact successor is most desirable.
///
/// Compares `v = ln z` rather than `z` so that desirabilities too small to
/// represent still order correctly.
pub fn lmdp_greedy_policy(sol: &LmdpSolution, world: &GridWorld) -> Policy {
    Policy(
        (0..world.num_states())
            .map(|s| argmax_action(Action::ALL.iter().map(|&a| sol.v[world.intended_successor(s, a)])))
            .collect(),
    )
}

/// Optimal policy for `world` using the solver that matches its kind.
pub fn expert_policy(world: &GridWorld) -> Result<Policy> {
    match world.kind() {
        crate::MdpKind::Standard => {
            let (_, q) = value_iteration(world, DEFAULT_VI_TOL, DEFAULT_MAX_ITERS)?;
            Ok(extract_greedy_policy(&q))
        }
        crate::MdpKind::Linear => {
            let sol = solve_lmdp(world, DEFAULT_LMDP_TOL, DEFAULT_MAX_ITERS)?;
            Ok(lmdp_greedy_policy(&sol, world))
        }
    }
}

/// Greedy policy induced by a reward vector on `world`'s dynamics, solved
/// with the method matching the world kind.
pub fn policy_for_rewards(world: &GridWorld, rewards: &[f64]) -> Result<(ValueFunction, Policy)> {
    match world.kind() {
        crate::MdpKind::Standard => {
            let (v, q) = value_iteration_with_rewards(world, rewards, DEFAULT_VI_TOL, DEFAULT_MAX_ITERS)?;
            Ok((v, extract_greedy_policy(&q)))
        }
        crate::MdpKind::Linear => {
            let costs: Vec<f64> = rewards
                .iter()
                .map(|r| -r * crate::gridworld::DEFAULT_COST_SCALE)
                .collect();
            let sol = solve_lmdp_with_costs(world, &costs, DEFAULT_LMDP_TOL, DEFAULT_MAX_ITERS)?;
            let policy = lmdp_greedy_policy(&sol, world);
            Ok((ValueFunction(sol.v), policy))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::GridSpec;
    use crate::MdpKind;
    use approx::assert_abs_diff_eq;

    #[test]
    fn all_zero_rewards_give_zero_values() {
        let w = GridWorld::build(GridSpec::new(3).with_goals(vec![])).unwrap();
        let (v, _) = value_iteration(&w, 1e-10, 10_000).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn self_loop_value_is_geometric_series() {
        // A corner state whose reward dominates: staying forever collects
        // 1 + 0.9 + 0.81 + ... = 10. Other states are unrewarded.
        let w = GridWorld::build(GridSpec::new(2).with_goals(vec![(0, 1.0)])).unwrap();
        let (v, q) = value_iteration(&w, 1e-12, 10_000).unwrap();
        assert_abs_diff_eq!(v.values()[0], 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(q.get(0, Action::Nothing), 10.0, epsilon = 1e-9);
    }

    #[test]
    fn reports_non_convergence() {
        let w = GridWorld::build(GridSpec::new(2).with_goals(vec![(0, 1.0)])).unwrap();
        match value_iteration(&w, 1e-10, 3) {
            Err(Error::NotConverged { iterations: 3, residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn bellman_residual_below_tolerance() {
        let w = GridWorld::build(GridSpec::new(4).with_determinism(0.7).with_seed(3)).unwrap();
        let tol = 1e-10;
        let (v, q) = value_iteration(&w, tol, 10_000).unwrap();
        for s in 0..w.num_states() {
            let best = max_of(&q.0[s]);
            assert!((best - v.values()[s]).abs() < tol);
        }
    }

    #[test]
    fn greedy_policy_prefers_unique_maxima_and_breaks_ties_up() {
        let q = QFunction(vec![[0.0, 1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 2.0], [3.0; 5]]);
        let p = extract_greedy_policy(&q);
        assert_eq!(p.actions(), &[Action::Down, Action::Nothing, Action::Up]);
    }

    #[test]
    fn lmdp_uniform_costs_give_constant_desirability() {
        let w = GridWorld::build(GridSpec::new(3).with_goals(vec![]).with_kind(MdpKind::Linear)).unwrap();
        let sol = solve_lmdp(&w, 1e-9, 10_000).unwrap();
        for &z in &sol.z {
            assert_abs_diff_eq!(z, 1.0, epsilon = 1e-12);
        }
        let p = lmdp_greedy_policy(&sol, &w);
        assert!(p.actions().iter().all(|&a| a == Action::Up));
    }

    #[test]
    fn lmdp_requires_linear_data() {
        let w = GridWorld::build(GridSpec::new(2)).unwrap();
        assert_eq!(solve_lmdp(&w, 1e-9, 100).unwrap_err(), Error::NotLinear);
    }

    #[test]
    fn lmdp_prefers_low_cost_state() {
        // Left-right pair on the top row of an n=2 grid; the goal at state 1.
        let w = GridWorld::build(GridSpec::new(2).with_goals(vec![(1, 2.0)]).with_kind(MdpKind::Linear)).unwrap();
        let sol = solve_lmdp(&w, 1e-12, 10_000).unwrap();
        assert!(sol.z[1] > sol.z[0]);
        assert_eq!(lmdp_greedy_policy(&sol, &w).action(0), Action::Right);
        assert!(lmdp_residual(&w, w.state_costs().unwrap(), &sol).unwrap() < 1e-8);
        for (z, v) in sol.z.iter().zip(&sol.v) {
            assert!((v - z.ln()).abs() < 1e-10);
        }
        for row in &sol.policy_dist {
            let total: f64 = row.iter().map(|e| e.1).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn lmdp_survives_extreme_costs() {
        let w = GridWorld::build(GridSpec::new(4).with_goals(vec![(5, 5000.0)]).with_kind(MdpKind::Linear)).unwrap();
        let sol = solve_lmdp(&w, 1e-9, 10_000).unwrap();
        assert!(sol.v.iter().all(|x| x.is_finite()));
        let p = lmdp_greedy_policy(&sol, &w);
        assert_eq!(p.action(4), Action::Right);
        assert_eq!(p.action(1), Action::Down);
    }
}
