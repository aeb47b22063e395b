//! NEAT-IRL: evolve networks that map state features to state values, scored
//! by how well the induced greedy policy agrees with the demonstration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demos::Demonstration;
use crate::error::{Error, Result};
use crate::gridworld::{Action, GridWorld};
use crate::neat::{evolve_generation, init_population, EvolutionParams, Genome, Network};
use crate::solvers::{argmax_action, Policy, ValueFunction};

/// Agreement between a generated and a demonstrated action: 1 when equal,
/// -1 when exactly opposite, 0 otherwise.
pub fn coherence(generated: Action, demonstrated: Action) -> i32 {
    if generated == demonstrated {
        1
    } else if demonstrated.opposite() == Some(generated) {
        -1
    } else {
        0
    }
}

/// Greedy one-step policy over adjacent values: each action scores the value
/// of its exact successor, so an off-grid move scores the current state.
pub fn values_to_policy(values: &[f64], world: &GridWorld) -> Result<Policy> {
    if values.len() != world.num_states() {
        return Err(Error::LengthMismatch {
            expected: world.num_states(),
            got: values.len(),
        });
    }
    Ok(Policy(
        (0..world.num_states())
            .map(|s| argmax_action(Action::ALL.iter().map(|&a| values[world.intended_successor(s, a)])))
            .collect(),
    ))
}

/// Coherence summed over distinct demonstrated states, shifted by their
/// count so the result lies in `[0, 2k]`.
pub fn policy_fitness(policy: &Policy, demo: &Demonstration) -> f64 {
    let expert = demo.expert_actions();
    let raw: i32 = expert.iter().map(|(&s, &a)| coherence(policy.action(s), a)).sum();
    f64::from(raw) + expert.len() as f64
}

/// Fitness of a perfect match: `2k` for `k` distinct demonstrated states.
pub fn perfect_fitness(demo: &Demonstration) -> f64 {
    2.0 * demo.demo_states().len() as f64
}

fn feature_inputs(world: &GridWorld) -> Vec<Vec<f64>> {
    (0..world.num_states()).map(|s| world.features().row_as_f64(s)).collect()
}

fn network_values(net: &Network, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut buf = Vec::new();
    inputs.iter().map(|x| net.activate_with(x, &mut buf)).collect()
}

pub fn genome_fitness(genome: &Genome, world: &GridWorld, demo: &Demonstration) -> Result<f64> {
    let net = Network::from_genome(genome)?;
    let values = network_values(&net, &feature_inputs(world))?;
    Ok(policy_fitness(&values_to_policy(&values, world)?, demo))
}

#[derive(Debug, Clone)]
pub struct IrlConfig<'a> {
    pub evolution: EvolutionParams,
    pub world: &'a GridWorld,
    pub demo: &'a Demonstration,
    /// Stop as soon as a genome reproduces every demonstrated action.
    pub early_stop: bool,
}

impl<'a> IrlConfig<'a> {
    pub fn new(world: &'a GridWorld, demo: &'a Demonstration, evolution: EvolutionParams) -> Self {
        Self {
            evolution,
            world,
            demo,
            early_stop: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrlResult {
    pub best_genome: Genome,
    pub learned_values: ValueFunction,
    pub learned_policy: Policy,
    /// Reward vector produced by the network, for reward-producing variants.
    pub learned_rewards: Option<Vec<f64>>,
    pub generations_run: usize,
    pub terminated_early: bool,
    /// Best fitness of each evaluated generation.
    pub fitness_history: Vec<f64>,
}

/// One line of per-generation progress output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    pub species_count: usize,
}

pub(crate) struct EvolutionOutcome {
    pub best: Genome,
    pub history: Vec<f64>,
    pub generations_run: usize,
    pub terminated_early: bool,
}

/// Generational loop shared by the NEAT-based learners. Population
/// evaluation runs in parallel; results are collected in index order.
pub(crate) fn evolve<F>(
    num_inputs: usize,
    params: &EvolutionParams,
    target: Option<f64>,
    fitness: F,
    mut progress: Option<&mut dyn FnMut(&GenerationRecord)>,
) -> Result<EvolutionOutcome>
where
    F: Fn(&Genome) -> f64 + Sync,
{
    let mut pop = init_population(num_inputs, params)?;
    let mut best: Option<Genome> = None;
    let mut history = Vec::with_capacity(params.max_generations);
    for generation in 0..params.max_generations {
        let scores: Vec<f64> = pop.genomes.par_iter().map(&fitness).collect();
        let (idx, &top) = scores
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, &f64)>, (i, f)| match acc {
                Some((_, b)) if *b >= *f => acc,
                _ => Some((i, f)),
            })
            .expect("population is non-empty");
        if best.as_ref().is_none_or(|b| top > b.fitness) {
            let mut g = pop.genomes[idx].clone();
            g.fitness = top;
            best = Some(g);
        }
        history.push(top);
        if let Some(cb) = progress.as_deref_mut() {
            cb(&GenerationRecord {
                generation,
                best_fitness: top,
                species_count: pop.species.len(),
            });
        }
        let done = target.is_some_and(|t| top >= t);
        if done || generation + 1 == params.max_generations {
            return Ok(EvolutionOutcome {
                best: best.expect("at least one generation evaluated"),
                history,
                generations_run: generation + 1,
                terminated_early: done,
            });
        }
        pop = evolve_generation(&pop, &scores, params)?;
    }
    unreachable!("max_generations is validated to be at least 1")
}

pub fn run_neat_irl(config: &IrlConfig<'_>) -> Result<IrlResult> {
    run_neat_irl_with_progress(config, None)
}

pub fn run_neat_irl_with_progress(
    config: &IrlConfig<'_>,
    progress: Option<&mut dyn FnMut(&GenerationRecord)>,
) -> Result<IrlResult> {
    let world = config.world;
    config.demo.validate(world)?;
    if config.demo.demo_states().is_empty() {
        return Err(Error::Empty("demonstration"));
    }
    let inputs = feature_inputs(world);
    let fitness = |g: &Genome| -> f64 {
        // Unreachable for genomes produced by the engine; score as worst.
        Network::from_genome(g)
            .and_then(|net| network_values(&net, &inputs))
            .and_then(|v| values_to_policy(&v, world))
            .map_or(0.0, |p| policy_fitness(&p, config.demo))
    };
    let target = config.early_stop.then(|| perfect_fitness(config.demo));
    let outcome = evolve(world.feature_width(), &config.evolution, target, fitness, progress)?;
    let net = Network::from_genome(&outcome.best)?;
    let values = network_values(&net, &inputs)?;
    let policy = values_to_policy(&values, world)?;
    Ok(IrlResult {
        best_genome: outcome.best,
        learned_values: ValueFunction(values),
        learned_policy: policy,
        learned_rewards: None,
        generations_run: outcome.generations_run,
        terminated_early: outcome.terminated_early,
        fitness_history: outcome.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos::Trace;
    use crate::gridworld::GridSpec;

    #[test]
    fn coherence_cases() {
        assert_eq!(coherence(Action::Up, Action::Up), 1);
        assert_eq!(coherence(Action::Down, Action::Up), -1);
        assert_eq!(coherence(Action::Nothing, Action::Left), 0);
        assert_eq!(coherence(Action::Up, Action::Left), 0);
        assert_eq!(coherence(Action::Left, Action::Nothing), 0);
        assert_eq!(coherence(Action::Nothing, Action::Nothing), 1);
    }

    #[test]
    fn coherence_antisymmetric_on_axis() {
        for a in [Action::Up, Action::Down, Action::Left, Action::Right] {
            for d in [a, a.opposite().unwrap()] {
                assert_eq!(coherence(a, d), -coherence(a.opposite().unwrap(), d));
            }
        }
    }

    #[test]
    fn increasing_columns_point_right() {
        let w = GridWorld::build(GridSpec::new(4)).unwrap();
        let values: Vec<f64> = (0..16).map(|s| (s % 4) as f64).collect();
        let p = values_to_policy(&values, &w).unwrap();
        for s in 0..16 {
            let expected = if s % 4 == 3 { Action::Up } else { Action::Right };
            assert_eq!(p.action(s), expected, "state {s}");
        }
    }

    #[test]
    fn uniform_values_tie_to_up() {
        let w = GridWorld::build(GridSpec::new(3)).unwrap();
        let p = values_to_policy(&[2.0; 9], &w).unwrap();
        assert!(p.actions().iter().all(|&a| a == Action::Up));
        assert!(values_to_policy(&[0.0; 3], &w).is_err());
    }

    fn demo_of(pairs: &[(usize, Action)]) -> Demonstration {
        Demonstration::new(pairs.iter().map(|&p| Trace { pairs: vec![p] }).collect())
    }

    #[test]
    fn fitness_bounds() {
        let demo = demo_of(&[(0, Action::Right), (5, Action::Down), (5, Action::Down)]);
        let matching = Policy(
            (0..16)
                .map(|s| if s == 0 { Action::Right } else { Action::Down })
                .collect(),
        );
        assert_eq!(policy_fitness(&matching, &demo), 4.0);
        let opposite = Policy((0..16).map(|s| if s == 0 { Action::Left } else { Action::Up }).collect());
        assert_eq!(policy_fitness(&opposite, &demo), 0.0);
        assert_eq!(perfect_fitness(&demo), 4.0);
    }

    #[test]
    fn one_match_one_orthogonal_miss() {
        // 1 + 0, shifted by k = 2.
        let demo = demo_of(&[(0, Action::Right), (1, Action::Down)]);
        let p = Policy(vec![Action::Right, Action::Left, Action::Up, Action::Up]);
        assert_eq!(policy_fitness(&p, &demo), 3.0);
    }
}
