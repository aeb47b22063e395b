use rand::Rng as _;

use super::genome::{Genome, InnovationRegistry};
use super::mutation::{crossover, mutate};
use super::EvolutionParams;
use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};

#[derive(Debug, Clone)]
pub struct Species {
    pub id: usize,
    pub representative: Genome,
    /// Indices into [`Population::genomes`] after the latest speciation.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Population {
    pub genomes: Vec<Genome>,
    pub species: Vec<Species>,
    pub registry: InnovationRegistry,
    pub generation: u64,
    /// Offspring count per species in the latest reproduction step.
    pub last_allocation: Vec<usize>,
    num_inputs: usize,
    next_species_id: usize,
}

impl Population {
    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn len(&self) -> usize {
        self.genomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genomes.is_empty()
    }

    /// Assigns every genome to the first species whose representative is
    /// within the compatibility threshold, creating species as needed.
    pub fn speciate(&mut self, params: &EvolutionParams) {
        for sp in &mut self.species {
            sp.members.clear();
        }
        for (i, g) in self.genomes.iter().enumerate() {
            let home = self
                .species
                .iter()
                .position(|sp| compatibility_distance(g, &sp.representative, params) < params.compat_threshold);
            match home {
                Some(k) => self.species[k].members.push(i),
                None => {
                    self.species.push(Species {
                        id: self.next_species_id,
                        representative: g.clone(),
                        members: vec![i],
                    });
                    self.next_species_id += 1;
                }
            }
        }
        self.species.retain(|sp| !sp.members.is_empty());
    }
}

/// `c1 * E / N + c2 * D / N + c3 * mean |w_a - w_b|` over matching genes,
/// where `N` is the larger genome's gene count.
pub fn compatibility_distance(a: &Genome, b: &Genome, params: &EvolutionParams) -> f64 {
    let (ca, cb) = (&a.connections, &b.connections);
    let n = ca.len().max(cb.len()).max(1) as f64;
    let max_a = ca.last().map_or(0, |c| c.innovation);
    let max_b = cb.last().map_or(0, |c| c.innovation);
    let (mut i, mut j) = (0, 0);
    let (mut excess, mut disjoint, mut matching, mut weight_diff) = (0usize, 0usize, 0usize, 0.0);
    while i < ca.len() || j < cb.len() {
        match (ca.get(i), cb.get(j)) {
            (Some(x), Some(y)) if x.innovation == y.innovation => {
                matching += 1;
                weight_diff += (x.weight - y.weight).abs();
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x.innovation < y.innovation => {
                if x.innovation > max_b {
                    excess += 1;
                } else {
                    disjoint += 1;
                }
                i += 1;
            }
            (Some(_), Some(y)) => {
                if y.innovation > max_a {
                    excess += 1;
                } else {
                    disjoint += 1;
                }
                j += 1;
            }
            (Some(_), None) => {
                excess += 1;
                i += 1;
            }
            (None, Some(_)) => {
                excess += 1;
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    let mean_weight = if matching > 0 { weight_diff / matching as f64 } else { 0.0 };
    params.c_excess * excess as f64 / n + params.c_disjoint * disjoint as f64 / n + params.c_weight * mean_weight
}

/// `pop_size` perceptron genomes sharing one set of innovation numbers.
pub fn init_population(num_inputs: usize, params: &EvolutionParams) -> Result<Population> {
    params.validate()?;
    if num_inputs == 0 {
        return Err(Error::InvalidParameter("a network needs at least one input".into()));
    }
    let mut registry = InnovationRegistry::new(num_inputs + 1);
    let genomes = (0..params.pop_size)
        .map(|i| {
            let mut rng = rng_from(params.seed, &[stream::EVOLUTION, 0, i as u64]);
            Genome::perceptron(num_inputs, &mut registry, &mut rng)
        })
        .collect();
    let mut pop = Population {
        genomes,
        species: Vec::new(),
        registry,
        generation: 0,
        last_allocation: Vec::new(),
        num_inputs,
        next_species_id: 0,
    };
    pop.speciate(params);
    Ok(pop)
}

/// Largest-remainder split of `total` offspring proportional to `shares`.
/// A zero total share splits evenly.
pub fn allocate_offspring(shares: &[f64], total: usize) -> Vec<usize> {
    if shares.is_empty() {
        return Vec::new();
    }
    let sum: f64 = shares.iter().sum();
    let weights: Vec<f64> = if sum > 0.0 && sum.is_finite() {
        shares.to_vec()
    } else {
        vec![1.0; shares.len()]
    };
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    // Stable sort keeps ties in species order.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Produces the next generation: speciation, explicit fitness sharing,
/// proportional offspring allocation and global elitism.
///
/// Every offspring draws from its own RNG stream keyed by (seed, generation,
/// index); reproduction itself runs in index order so the shared innovation
/// registry is updated deterministically.
pub fn evolve_generation(pop: &Population, fitnesses: &[f64], params: &EvolutionParams) -> Result<Population> {
    params.validate()?;
    if fitnesses.len() != pop.genomes.len() {
        return Err(Error::LengthMismatch {
            expected: pop.genomes.len(),
            got: fitnesses.len(),
        });
    }
    if let Some(f) = fitnesses.iter().find(|f| !(f.is_finite() && **f >= 0.0)) {
        return Err(Error::InvalidParameter(format!("fitness must be finite and non-negative, got {f}")));
    }
    let mut current = pop.clone();
    for (g, &f) in current.genomes.iter_mut().zip(fitnesses) {
        g.fitness = f;
    }
    current.speciate(params);

    let mut ranked: Vec<usize> = (0..fitnesses.len()).collect();
    ranked.sort_by(|&a, &b| fitnesses[b].partial_cmp(&fitnesses[a]).unwrap_or(std::cmp::Ordering::Equal));
    let elites = params.elitism.min(params.pop_size);
    let mut next: Vec<Genome> = ranked[..elites].iter().map(|&i| current.genomes[i].clone()).collect();

    let shares: Vec<f64> = current
        .species
        .iter()
        .map(|sp| sp.members.iter().map(|&i| fitnesses[i]).sum::<f64>() / sp.members.len() as f64)
        .collect();
    let allocation = allocate_offspring(&shares, params.pop_size - elites);

    let generation = current.generation + 1;
    let mut registry = current.registry.clone();
    for (sp, &count) in current.species.iter().zip(&allocation) {
        let mut parents = sp.members.clone();
        parents.sort_by(|&a, &b| fitnesses[b].partial_cmp(&fitnesses[a]).unwrap_or(std::cmp::Ordering::Equal));
        let keep = ((parents.len() as f64 * params.survival_threshold).ceil() as usize).clamp(1, parents.len());
        parents.truncate(keep);
        for _ in 0..count {
            let index = next.len() as u64;
            let mut rng = rng_from(params.seed, &[stream::EVOLUTION, generation, index]);
            let mut child = if parents.len() >= 2 && rng.random::<f64>() < params.crossover_fraction {
                let i = rng.random_range(0..parents.len());
                let mut j = rng.random_range(0..parents.len() - 1);
                if j >= i {
                    j += 1;
                }
                let (a, b) = (parents[i], parents[j]);
                let (fitter, other) = if fitnesses[a] >= fitnesses[b] { (a, b) } else { (b, a) };
                crossover(&current.genomes[fitter], &current.genomes[other], &mut rng)
            } else {
                let mut c = current.genomes[parents[rng.random_range(0..parents.len())]].clone();
                c.fitness = 0.0;
                c
            };
            mutate(&mut child, params, &mut registry, &mut rng);
            next.push(child);
        }
    }

    let mut species = current.species.clone();
    for sp in &mut species {
        let best = *sp
            .members
            .iter()
            .max_by(|&&a, &&b| {
                fitnesses[a]
                    .partial_cmp(&fitnesses[b])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.cmp(&a))
            })
            .expect("species are non-empty");
        sp.representative = current.genomes[best].clone();
        sp.members.clear();
    }

    Ok(Population {
        genomes: next,
        species,
        registry,
        generation,
        last_allocation: allocation,
        num_inputs: current.num_inputs,
        next_species_id: current.next_species_id,
    })
}
