use std::collections::{BTreeSet, HashMap};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Input,
    Output,
    Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    SteepSigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::SteepSigmoid => steep_sigmoid(x),
            Activation::Linear => x,
        }
    }
}

/// `1 / (1 + exp(-4.9 x))`.
pub fn steep_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-4.9 * x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeGene {
    pub id: usize,
    pub kind: NodeKind,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionGene {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
    pub enabled: bool,
    pub innovation: u64,
}

/// Historical markings shared by every genome of one run.
///
/// A structural signature `(from, to)` always maps to the same innovation
/// number, and splitting the same connection maps to the same hidden node.
#[derive(Debug, Clone, Default)]
pub struct InnovationRegistry {
    next_innovation: u64,
    next_node: usize,
    connections: HashMap<(usize, usize), u64>,
    splits: HashMap<(usize, usize), usize>,
}

impl InnovationRegistry {
    pub fn new(first_free_node: usize) -> Self {
        Self {
            next_node: first_free_node,
            ..Self::default()
        }
    }

    pub fn connection_innovation(&mut self, from: usize, to: usize) -> u64 {
        let next = &mut self.next_innovation;
        *self.connections.entry((from, to)).or_insert_with(|| {
            let id = *next;
            *next += 1;
            id
        })
    }

    /// Node id for splitting `(from, to)`. Falls back to a fresh id when the
    /// genome already holds the registered one.
    pub fn split_node(&mut self, from: usize, to: usize, genome: &Genome) -> usize {
        if let Some(&id) = self.splits.get(&(from, to)) {
            if !genome.has_node(id) {
                return id;
            }
            return self.fresh_node();
        }
        let id = self.fresh_node();
        self.splits.insert((from, to), id);
        id
    }

    fn fresh_node(&mut self) -> usize {
        let id = self.next_node;
        self.next_node += 1;
        id
    }

    pub fn innovation_count(&self) -> u64 {
        self.next_innovation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub nodes: Vec<NodeGene>,
    /// Sorted by innovation number.
    pub connections: Vec<ConnectionGene>,
    pub fitness: f64,
}

impl Genome {
    /// Inputs `0..num_inputs` fully connected to a single linear output.
    pub fn perceptron(num_inputs: usize, registry: &mut InnovationRegistry, rng: &mut Rng) -> Self {
        let output = num_inputs;
        let mut nodes: Vec<NodeGene> = (0..num_inputs)
            .map(|id| NodeGene {
                id,
                kind: NodeKind::Input,
                activation: Activation::Linear,
            })
            .collect();
        nodes.push(NodeGene {
            id: output,
            kind: NodeKind::Output,
            activation: Activation::Linear,
        });
        let connections = (0..num_inputs)
            .map(|i| ConnectionGene {
                from: i,
                to: output,
                weight: rng.random_range(-1.0..1.0),
                enabled: true,
                innovation: registry.connection_innovation(i, output),
            })
            .collect();
        Self {
            nodes,
            connections,
            fitness: 0.0,
        }
    }

    pub fn num_inputs(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Input).count()
    }

    pub fn output_id(&self) -> usize {
        self.nodes
            .iter()
            .find(|n| n.kind == NodeKind::Output)
            .map(|n| n.id)
            .expect("genome has an output node")
    }

    pub fn has_node(&self, id: usize) -> bool {
        self.nodes.iter().any(|n| n.id == id)
    }

    pub fn node(&self, id: usize) -> Option<&NodeGene> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn hidden_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Hidden).count()
    }

    pub fn has_connection(&self, from: usize, to: usize) -> bool {
        self.connections.iter().any(|c| c.from == from && c.to == to)
    }

    pub fn innovations(&self) -> BTreeSet<u64> {
        self.connections.iter().map(|c| c.innovation).collect()
    }

    /// True when adding `from -> to` would close a directed cycle. Disabled
    /// connections count, since crossover may re-enable them.
    pub fn creates_cycle(&self, from: usize, to: usize) -> bool {
        if from == to {
            return true;
        }
        let mut stack = vec![to];
        let mut seen = BTreeSet::new();
        while let Some(node) = stack.pop() {
            if node == from {
                return true;
            }
            if seen.insert(node) {
                stack.extend(self.connections.iter().filter(|c| c.from == node).map(|c| c.to));
            }
        }
        false
    }

    pub(crate) fn sort_connections(&mut self) {
        self.connections.sort_by_key(|c| c.innovation);
    }

    /// Node ids in topological order over all connections, or an error on a cycle.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        topo_sort(&self.nodes, self.connections.iter().map(|c| (c.from, c.to)))
    }

    /// Checks the structural invariants: acyclic, endpoints exist, unique
    /// innovations, inputs never targeted, the output never a source.
    pub fn validate(&self) -> Result<()> {
        let ids: BTreeSet<usize> = self.nodes.iter().map(|n| n.id).collect();
        if ids.len() != self.nodes.len() {
            return Err(Error::InvalidParameter("duplicate node id".into()));
        }
        if self.nodes.iter().filter(|n| n.kind == NodeKind::Output).count() != 1 {
            return Err(Error::InvalidParameter("genome needs exactly one output".into()));
        }
        let mut innovations = BTreeSet::new();
        let mut signatures = BTreeSet::new();
        for c in &self.connections {
            let (Some(from), Some(to)) = (self.node(c.from), self.node(c.to)) else {
                return Err(Error::InvalidParameter(format!(
                    "connection {} -> {} references a missing node",
                    c.from, c.to
                )));
            };
            if to.kind == NodeKind::Input || from.kind == NodeKind::Output {
                return Err(Error::InvalidParameter(format!(
                    "connection {} -> {} has an illegal direction",
                    c.from, c.to
                )));
            }
            if !innovations.insert(c.innovation) || !signatures.insert((c.from, c.to)) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate gene {} ({} -> {})",
                    c.innovation, c.from, c.to
                )));
            }
        }
        self.topological_order()?;
        Ok(())
    }
}

fn topo_sort(nodes: &[NodeGene], edges: impl Iterator<Item = (usize, usize)>) -> Result<Vec<usize>> {
    let index: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
    let mut indegree = vec![0usize; nodes.len()];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (from, to) in edges {
        let (Some(&f), Some(&t)) = (index.get(&from), index.get(&to)) else {
            continue;
        };
        out[f].push(t);
        indegree[t] += 1;
    }
    let mut ready: Vec<usize> = (0..nodes.len()).rev().filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop() {
        order.push(nodes[i].id);
        for &t in &out[i] {
            indegree[t] -= 1;
            if indegree[t] == 0 {
                ready.push(t);
            }
        }
    }
    if order.len() != nodes.len() {
        return Err(Error::CyclicGenome);
    }
    Ok(order)
}

/// Phenotype compiled from a genome: enabled connections only, evaluated in
/// topological order.
#[derive(Debug, Clone)]
pub struct Network {
    num_inputs: usize,
    num_nodes: usize,
    output: usize,
    steps: Vec<Step>,
}

/// Node slot, activation and incoming `(slot, weight)` pairs, in evaluation order.
type Step = (usize, Activation, Vec<(usize, f64)>);

impl Network {
    pub fn from_genome(genome: &Genome) -> Result<Self> {
        let enabled = genome.connections.iter().filter(|c| c.enabled);
        let order = topo_sort(&genome.nodes, enabled.clone().map(|c| (c.from, c.to)))?;
        // Inputs keep slots 0..k so input vectors map directly.
        let mut slot: HashMap<usize, usize> = HashMap::with_capacity(genome.nodes.len());
        let mut inputs: Vec<usize> = genome
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Input)
            .map(|n| n.id)
            .collect();
        inputs.sort_unstable();
        for (i, &id) in inputs.iter().enumerate() {
            slot.insert(id, i);
        }
        for n in &genome.nodes {
            let next = slot.len();
            slot.entry(n.id).or_insert(next);
        }
        let mut incoming: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
        for c in enabled {
            incoming.entry(c.to).or_default().push((slot[&c.from], c.weight));
        }
        let steps = order
            .into_iter()
            .filter_map(|id| {
                let node = genome.node(id).expect("ordered node exists");
                (node.kind != NodeKind::Input).then(|| {
                    (
                        slot[&id],
                        node.activation,
                        incoming.remove(&id).unwrap_or_default(),
                    )
                })
            })
            .collect();
        Ok(Self {
            num_inputs: inputs.len(),
            num_nodes: genome.nodes.len(),
            output: slot[&genome.output_id()],
            steps,
        })
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn activate(&self, inputs: &[f64]) -> Result<f64> {
        let mut buf = vec![0.0; self.num_nodes];
        self.activate_with(inputs, &mut buf)
    }

    /// Like [`Network::activate`] but reuses a caller-provided scratch buffer.
    pub fn activate_with(&self, inputs: &[f64], buf: &mut Vec<f64>) -> Result<f64> {
        if inputs.len() != self.num_inputs {
            return Err(Error::InputWidth {
                expected: self.num_inputs,
                got: inputs.len(),
            });
        }
        buf.clear();
        buf.resize(self.num_nodes, 0.0);
        buf[..self.num_inputs].copy_from_slice(inputs);
        for (slot, activation, incoming) in &self.steps {
            let sum: f64 = incoming.iter().map(|&(src, w)| buf[src] * w).sum();
            buf[*slot] = activation.apply(sum);
        }
        Ok(buf[self.output])
    }
}

/// Evaluates `genome` on one input vector.
pub fn activate(genome: &Genome, inputs: &[f64]) -> Result<f64> {
    Network::from_genome(genome)?.activate(inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use approx::assert_abs_diff_eq;

    fn manual(nodes: Vec<(usize, NodeKind, Activation)>, conns: Vec<(usize, usize, f64)>) -> Genome {
        Genome {
            nodes: nodes
                .into_iter()
                .map(|(id, kind, activation)| NodeGene { id, kind, activation })
                .collect(),
            connections: conns
                .into_iter()
                .enumerate()
                .map(|(i, (from, to, weight))| ConnectionGene {
                    from,
                    to,
                    weight,
                    enabled: true,
                    innovation: i as u64,
                })
                .collect(),
            fitness: 0.0,
        }
    }

    #[test]
    fn perceptron_shape() {
        let mut reg = InnovationRegistry::new(5);
        let mut rng = rng_from(1, &[]);
        let g = Genome::perceptron(4, &mut reg, &mut rng);
        assert_eq!(g.nodes.len(), 5);
        assert_eq!(g.connections.len(), 4);
        assert!(g.connections.iter().all(|c| (-1.0..1.0).contains(&c.weight)));
        g.validate().unwrap();
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut reg = InnovationRegistry::new(4);
        let mut rng = rng_from(1, &[]);
        let mut g = Genome::perceptron(3, &mut reg, &mut rng);
        for c in &mut g.connections {
            c.weight = 0.0;
        }
        assert_eq!(activate(&g, &[1.0, -2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn linear_pass_through() {
        let g = manual(
            vec![(0, NodeKind::Input, Activation::Linear), (1, NodeKind::Output, Activation::Linear)],
            vec![(0, 1, 1.0)],
        );
        assert_eq!(activate(&g, &[0.5]).unwrap(), 0.5);
    }

    #[test]
    fn one_hidden_node_hand_value() {
        // 1 / (1 + e^-4.9) = 0.992608...
        let g = manual(
            vec![
                (0, NodeKind::Input, Activation::Linear),
                (1, NodeKind::Output, Activation::Linear),
                (2, NodeKind::Hidden, Activation::SteepSigmoid),
            ],
            vec![(0, 2, 1.0), (2, 1, 1.0)],
        );
        let expected = 1.0 / (1.0 + (-4.9f64).exp());
        assert_abs_diff_eq!(activate(&g, &[1.0]).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.992_608, epsilon = 1e-6);
    }

    #[test]
    fn cyclic_genome_rejected() {
        let g = manual(
            vec![
                (0, NodeKind::Input, Activation::Linear),
                (1, NodeKind::Output, Activation::Linear),
                (2, NodeKind::Hidden, Activation::SteepSigmoid),
                (3, NodeKind::Hidden, Activation::SteepSigmoid),
            ],
            vec![(0, 2, 1.0), (2, 3, 1.0), (3, 2, 1.0), (3, 1, 1.0)],
        );
        assert_eq!(activate(&g, &[1.0]).unwrap_err(), Error::CyclicGenome);
        assert!(g.validate().is_err());
    }

    #[test]
    fn input_width_checked() {
        let g = manual(
            vec![(0, NodeKind::Input, Activation::Linear), (1, NodeKind::Output, Activation::Linear)],
            vec![(0, 1, 1.0)],
        );
        assert!(matches!(
            activate(&g, &[1.0, 2.0]),
            Err(Error::InputWidth { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn registry_reuses_signatures() {
        let mut reg = InnovationRegistry::new(3);
        let a = reg.connection_innovation(0, 2);
        let b = reg.connection_innovation(1, 2);
        assert_eq!(reg.connection_innovation(0, 2), a);
        assert!(b > a);
    }

    #[test]
    fn cycle_detection() {
        let g = manual(
            vec![
                (0, NodeKind::Input, Activation::Linear),
                (1, NodeKind::Output, Activation::Linear),
                (2, NodeKind::Hidden, Activation::SteepSigmoid),
                (3, NodeKind::Hidden, Activation::SteepSigmoid),
            ],
            vec![(0, 2, 1.0), (2, 3, 1.0), (3, 1, 1.0)],
        );
        assert!(g.creates_cycle(3, 2));
        assert!(g.creates_cycle(2, 2));
        assert!(!g.creates_cycle(2, 1));
        assert!(!g.creates_cycle(0, 3));
    }

    #[test]
    fn genome_json_round_trip() {
        let mut reg = InnovationRegistry::new(3);
        let mut rng = rng_from(3, &[]);
        let g = Genome::perceptron(2, &mut reg, &mut rng);
        let text = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<Genome>(&text).unwrap(), g);
    }
}
