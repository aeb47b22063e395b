use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::genome::{Activation, ConnectionGene, Genome, InnovationRegistry, NodeGene, NodeKind};
use super::EvolutionParams;
use crate::rng::Rng;

/// Splits a random enabled connection with a new hidden node. The incoming
/// half gets weight 1.0, the outgoing half keeps the old weight.
///
/// Returns false when the genome has no enabled connection.
pub fn add_node(genome: &mut Genome, registry: &mut InnovationRegistry, rng: &mut Rng) -> bool {
    let enabled: Vec<usize> = (0..genome.connections.len())
        .filter(|&i| genome.connections[i].enabled)
        .collect();
    if enabled.is_empty() {
        return false;
    }
    let pick = enabled[rng.random_range(0..enabled.len())];
    let old = genome.connections[pick];
    genome.connections[pick].enabled = false;
    let hidden = registry.split_node(old.from, old.to, genome);
    genome.nodes.push(NodeGene {
        id: hidden,
        kind: NodeKind::Hidden,
        activation: Activation::SteepSigmoid,
    });
    genome.connections.push(ConnectionGene {
        from: old.from,
        to: hidden,
        weight: 1.0,
        enabled: true,
        innovation: registry.connection_innovation(old.from, hidden),
    });
    genome.connections.push(ConnectionGene {
        from: hidden,
        to: old.to,
        weight: old.weight,
        enabled: true,
        innovation: registry.connection_innovation(hidden, old.to),
    });
    genome.sort_connections();
    true
}

/// Adds a connection between two unconnected nodes that keeps the graph
/// acyclic. Returns false when no such pair exists.
pub fn add_connection(genome: &mut Genome, registry: &mut InnovationRegistry, rng: &mut Rng) -> bool {
    let mut candidates = Vec::new();
    for from in genome.nodes.iter().filter(|n| n.kind != NodeKind::Output) {
        for to in genome.nodes.iter().filter(|n| n.kind != NodeKind::Input) {
            if from.id != to.id && !genome.has_connection(from.id, to.id) && !genome.creates_cycle(from.id, to.id) {
                candidates.push((from.id, to.id));
            }
        }
    }
    if candidates.is_empty() {
        return false;
    }
    let (from, to) = candidates[rng.random_range(0..candidates.len())];
    genome.connections.push(ConnectionGene {
        from,
        to,
        weight: rng.random_range(-1.0..1.0),
        enabled: true,
        innovation: registry.connection_innovation(from, to),
    });
    genome.sort_connections();
    true
}

/// Adds `Normal(0, sigma)` noise to each weight with probability `p`.
pub fn perturb_weights(genome: &mut Genome, p: f64, sigma: f64, rng: &mut Rng) {
    let noise = Normal::new(0.0, sigma).expect("finite non-negative sigma");
    for c in &mut genome.connections {
        if rng.random::<f64>() < p {
            c.weight += noise.sample(rng);
        }
    }
}

/// Applies add-node, add-connection and weight perturbation, each with its
/// own probability.
pub fn mutate(genome: &mut Genome, params: &EvolutionParams, registry: &mut InnovationRegistry, rng: &mut Rng) {
    if rng.random::<f64>() < params.p_add_node {
        add_node(genome, registry, rng);
    }
    if rng.random::<f64>() < params.p_add_connection {
        add_connection(genome, registry, rng);
    }
    perturb_weights(genome, params.p_weight, params.weight_sigma, rng);
}

/// Matching genes take their weight from either parent at random; disjoint
/// and excess genes come from `fitter`, so the offspring shares its topology.
pub fn crossover(fitter: &Genome, other: &Genome, rng: &mut Rng) -> Genome {
    let mut child = fitter.clone();
    child.fitness = 0.0;
    let mut j = 0;
    for gene in &mut child.connections {
        while j < other.connections.len() && other.connections[j].innovation < gene.innovation {
            j += 1;
        }
        let Some(mate) = other.connections.get(j).filter(|m| m.innovation == gene.innovation) else {
            continue;
        };
        if rng.random::<bool>() {
            gene.weight = mate.weight;
        }
        if !gene.enabled || !mate.enabled {
            gene.enabled = rng.random::<f64>() >= 0.75;
        }
    }
    child
}
