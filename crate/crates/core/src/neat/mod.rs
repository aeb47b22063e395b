//! Direct-encoding NEAT: genomes of node and connection genes, feed-forward
//! activation, structural mutation, crossover, speciation and generational
//! evolution.

mod genome;
mod mutation;
mod population;

pub use genome::{
    activate, steep_sigmoid, Activation, ConnectionGene, Genome, InnovationRegistry, Network, NodeGene, NodeKind,
};
pub use mutation::{add_connection, add_node, crossover, mutate, perturb_weights};
pub use population::{allocate_offspring, compatibility_distance, evolve_generation, init_population, Population, Species};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionParams {
    pub pop_size: usize,
    pub max_generations: usize,
    pub p_add_node: f64,
    pub p_add_connection: f64,
    /// Per-connection probability of a weight perturbation.
    pub p_weight: f64,
    pub weight_sigma: f64,
    pub c_excess: f64,
    pub c_disjoint: f64,
    pub c_weight: f64,
    pub compat_threshold: f64,
    pub elitism: usize,
    /// Fraction of offspring produced by crossover rather than cloning.
    pub crossover_fraction: f64,
    /// Fraction of each species eligible to reproduce.
    pub survival_threshold: f64,
    pub seed: u64,
}

impl Default for EvolutionParams {
    fn default() -> Self {
        Self {
            pop_size: 50,
            max_generations: 50,
            p_add_node: 0.03,
            p_add_connection: 0.05,
            p_weight: 0.8,
            weight_sigma: 0.5,
            c_excess: 1.0,
            c_disjoint: 1.0,
            c_weight: 0.4,
            compat_threshold: 3.0,
            elitism: 1,
            crossover_fraction: 0.75,
            survival_threshold: 0.2,
            seed: 0,
        }
    }
}

impl EvolutionParams {
    pub fn validate(&self) -> Result<()> {
        if self.pop_size == 0 || self.max_generations == 0 {
            return Err(Error::InvalidParameter(
                "population size and generation count must be at least 1".into(),
            ));
        }
        let probs = [
            ("p_add_node", self.p_add_node),
            ("p_add_connection", self.p_add_connection),
            ("p_weight", self.p_weight),
            ("crossover_fraction", self.crossover_fraction),
            ("survival_threshold", self.survival_threshold),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.weight_sigma < 0.0 || self.compat_threshold <= 0.0 {
            return Err(Error::InvalidParameter(
                "weight sigma must be non-negative and the compatibility threshold positive".into(),
            ));
        }
        if self.elitism > self.pop_size {
            return Err(Error::InvalidParameter("elitism exceeds population size".into()));
        }
        Ok(())
    }
}
