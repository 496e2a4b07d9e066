//! Brute-force ground truth for instances small enough to enumerate.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::chain::Energy;
use crate::error::{Error, Result};
use crate::grammar::{Grammar, Symbol, TreeSample};
use crate::inference::{MaskedLeaves, Marginals};
use crate::observables::layer_overlap;
use crate::unionfind::DisjointSet;

pub const DEFAULT_BUDGET: usize = 1_000_000;

/// Every valid sentence of a grammar with its latent tree.
#[derive(Debug, Clone)]
pub struct SentenceSet {
    v: usize,
    trees: Vec<TreeSample>,
    index: HashMap<Vec<Symbol>, usize>,
}

impl SentenceSet {
    pub fn v(&self) -> usize {
        self.v
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn tree(&self, id: usize) -> &TreeSample {
        &self.trees[id]
    }

    pub fn trees(&self) -> &[TreeSample] {
        &self.trees
    }

    pub fn id_of(&self, leaves: &[Symbol]) -> Option<usize> {
        self.index.get(leaves).copied()
    }
}

/// Depth-first expansion over every root symbol and every rule choice.
pub fn enumerate_sentences(grammar: &Grammar, budget: usize) -> Result<SentenceSet> {
    let params = grammar.params();
    let count = params.sentence_count();
    if count > budget as f64 {
        return Err(Error::BudgetExceeded { count, budget });
    }
    let count = count.round() as usize;
    let (v, s, m, depth) = (grammar.v(), grammar.s(), grammar.m(), grammar.depth());

    // Choice vector: root symbol, then one rule index per internal node in
    // top-down, left-to-right order.
    let internal = params.internal_nodes();
    let mut choice = vec![0usize; internal];
    let mut trees = Vec::with_capacity(count);
    for root in 0..v {
        loop {
            let mut levels = vec![Vec::new(); depth + 1];
            levels[depth] = vec![root as Symbol];
            let mut next = 0;
            for level in (1..=depth).rev() {
                let table = grammar.rules(level);
                let mut below = Vec::with_capacity(levels[level].len() * s);
                for &parent in &levels[level] {
                    below.extend_from_slice(table.rule(parent, choice[next]));
                    next += 1;
                }
                levels[level - 1] = below;
            }
            trees.push(TreeSample { levels });

            // Odometer increment; done once every digit wraps.
            let mut digit = internal;
            let wrapped = loop {
                if digit == 0 {
                    break true;
                }
                digit -= 1;
                choice[digit] += 1;
                if choice[digit] < m {
                    break false;
                }
                choice[digit] = 0;
            };
            if wrapped {
                break;
            }
        }
    }

    assert_eq!(trees.len(), count, "count identity v * m^I violated");
    let index: HashMap<Vec<Symbol>, usize> =
        trees.iter().enumerate().map(|(i, t)| (t.leaves().to_vec(), i)).collect();
    assert_eq!(index.len(), trees.len(), "two latent trees share a sentence");
    Ok(SentenceSet { v, trees, index })
}

/// Graph on sentences, edges between sentences differing in exactly one leaf.
#[derive(Debug, Clone)]
pub struct FlipGraph {
    pub adjacency: Vec<Vec<usize>>,
    /// Component label per sentence, `0..n_components`.
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl FlipGraph {
    pub fn n_components(&self) -> usize {
        self.sizes.len()
    }

    pub fn largest_fraction(&self) -> f64 {
        let n: usize = self.sizes.iter().sum();
        *self.sizes.iter().max().unwrap_or(&0) as f64 / n.max(1) as f64
    }

    pub fn component_of(&self, id: usize) -> Vec<usize> {
        let label = self.labels[id];
        (0..self.labels.len()).filter(|&j| self.labels[j] == label).collect()
    }
}

const HOLE: Symbol = Symbol::MAX;

pub fn build_flip_graph(set: &SentenceSet) -> FlipGraph {
    let n = set.len();
    let d = set.trees.first().map_or(0, |t| t.leaves().len());
    let mut adjacency = vec![Vec::new(); n];
    let mut ds = DisjointSet::new(n);
    for position in 0..d {
        let mut buckets: HashMap<Vec<Symbol>, Vec<usize>> = HashMap::new();
        for (id, tree) in set.trees.iter().enumerate() {
            let mut key = tree.leaves().to_vec();
            key[position] = HOLE;
            buckets.entry(key).or_default().push(id);
        }
        for members in buckets.values().filter(|b| b.len() > 1) {
            for (i, &a) in members.iter().enumerate() {
                for &b in &members[i + 1..] {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                    ds.union(a, b);
                }
            }
        }
    }
    adjacency.iter_mut().for_each(|a| a.sort_unstable());
    let labels = ds.labels();
    let mut sizes = vec![0; labels.iter().max().map_or(0, |&l| l + 1)];
    labels.iter().for_each(|&l| sizes[l] += 1);
    FlipGraph { adjacency, labels, sizes }
}

/// Smallest leaf Hamming distance between two distinct sentences.
pub fn min_pairwise_hamming(set: &SentenceSet) -> usize {
    let mut best = usize::MAX;
    for (i, a) in set.trees.iter().enumerate() {
        for b in &set.trees[i + 1..] {
            let h = a.leaves().iter().zip(b.leaves()).filter(|(x, y)| x != y).count();
            best = best.min(h);
        }
    }
    best
}

/// Long-time level-`level` overlap of a single-flip chain started at `x0`:
/// the mean overlap between `x0` and a uniform draw from its component.
pub fn exact_component_plateau(graph: &FlipGraph, set: &SentenceSet, x0: usize, level: usize) -> Result<f64> {
    let members = graph.component_of(x0);
    let start = set.tree(x0);
    let mut total = 0.0;
    for &j in &members {
        total += layer_overlap(start, set.tree(j), level)?;
    }
    Ok(total / members.len() as f64)
}

/// [`exact_component_plateau`] averaged over a uniformly drawn `x0`, for every level.
///
/// Uses per-component symbol counts, so the cost is linear in the number of sentences.
pub fn mean_exact_plateaus(graph: &FlipGraph, set: &SentenceSet) -> Vec<f64> {
    let Some(shape) = set.trees.first() else {
        return Vec::new();
    };
    let v = set.v;
    let n = set.len() as f64;
    shape
        .levels
        .iter()
        .enumerate()
        .map(|(level, symbols)| {
            let w = symbols.len();
            let mut counts = vec![0u32; graph.n_components() * w * v];
            let slot = |c: usize, i: usize, a: Symbol| (c * w + i) * v + a as usize;
            for (id, tree) in set.trees.iter().enumerate() {
                for (i, &a) in tree.level(level).iter().enumerate() {
                    counts[slot(graph.labels[id], i, a)] += 1;
                }
            }
            let mut total = 0.0;
            for (id, tree) in set.trees.iter().enumerate() {
                let c = graph.labels[id];
                let same: u32 = tree.level(level).iter().enumerate().map(|(i, &a)| counts[slot(c, i, a)]).sum();
                total += same as f64 / (w as f64 * graph.sizes[c] as f64);
            }
            total / n
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BrutePosterior {
    /// Sentence ids compatible with the observed leaves; the posterior is uniform on them.
    pub support: Vec<usize>,
    pub marginals: Marginals,
}

impl BrutePosterior {
    /// Posterior law over all sentences, indexed by id.
    pub fn law(&self, n: usize) -> Vec<f64> {
        let mut p = vec![0.0; n];
        let w = 1.0 / self.support.len() as f64;
        self.support.iter().for_each(|&i| p[i] = w);
        p
    }
}

pub fn posterior_brute(set: &SentenceSet, masked: &MaskedLeaves) -> Result<BrutePosterior> {
    let support: Vec<usize> = (0..set.len()).filter(|&i| masked.admits(set.tree(i).leaves())).collect();
    let first = support.first().ok_or(Error::EmptySupport)?;
    let shape = set.tree(*first);
    let v = set.v;
    let mut counts: Vec<Vec<Vec<f64>>> =
        shape.levels.iter().map(|l| vec![vec![0.0; v]; l.len()]).collect();
    for &i in &support {
        for (level, symbols) in set.tree(i).levels.iter().enumerate() {
            for (pos, &a) in symbols.iter().enumerate() {
                counts[level][pos][a as usize] += 1.0;
            }
        }
    }
    let total = support.len() as f64;
    counts.iter_mut().flatten().flatten().for_each(|c| *c /= total);
    Ok(BrutePosterior { support, marginals: Marginals { levels: counts } })
}

/// Exact `P_H(x) ∝ exp(-H(x))` over sentences (the data law is uniform).
/// With `restrict`, mass is confined to the given ids.
pub fn reweighted_law(set: &SentenceSet, energy: &dyn Energy, restrict: Option<&[usize]>) -> Vec<f64> {
    let ids: Vec<usize> = match restrict {
        Some(r) => r.to_vec(),
        None => (0..set.len()).collect(),
    };
    let energies: Vec<f64> = ids.iter().map(|&i| energy.energy(set.tree(i))).collect();
    let floor = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut law = vec![0.0; set.len()];
    let mut z = 0.0;
    for (&i, &h) in ids.iter().zip(&energies) {
        let w = (-(h - floor)).exp();
        law[i] = w;
        z += w;
    }
    law.iter_mut().for_each(|p| *p /= z);
    law
}

/// One row of the component-statistics table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentStats {
    pub v: usize,
    pub s: usize,
    #[serde(rename = "L")]
    pub depth: usize,
    pub m: usize,
    pub f: f64,
    pub realization: usize,
    pub n_sentences: usize,
    pub n_components: usize,
    pub largest_fraction: f64,
}

pub fn component_stats(grammar: &Grammar, realization: usize, budget: usize) -> Result<ComponentStats> {
    let set = enumerate_sentences(grammar, budget)?;
    let graph = build_flip_graph(&set);
    let p = grammar.params();
    Ok(ComponentStats {
        v: p.v,
        s: p.s,
        depth: p.depth,
        m: p.m,
        f: p.rule_density(),
        realization,
        n_sentences: set.len(),
        n_components: graph.n_components(),
        largest_fraction: graph.largest_fraction(),
    })
}
