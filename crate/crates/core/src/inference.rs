//! Exact posterior inference on the hierarchy tree given partially masked leaves.
//!
//! Upward messages are computed level by level. Three message shapes keep the
//! pass cheap: a fully observed subtree has a single admissible symbol found by
//! reverse lookup ([`Message::Known`]), a fully masked subtree has a uniform
//! message ([`Message::Free`]), and anything else carries an explicit weight
//! vector normalized to max 1 with its log scale kept alongside.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{Grammar, LevelRules, Symbol, TreeSample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedLeaves {
    values: Vec<Option<Symbol>>,
}

impl MaskedLeaves {
    pub fn new(values: Vec<Option<Symbol>>) -> Self {
        Self { values }
    }

    /// Mask `positions` of a fully observed sequence.
    pub fn from_sentence(leaves: &[Symbol], positions: &[usize]) -> Self {
        let mut values: Vec<Option<Symbol>> = leaves.iter().copied().map(Some).collect();
        for &p in positions {
            values[p] = None;
        }
        Self { values }
    }

    pub fn fully_masked(d: usize) -> Self {
        Self { values: vec![None; d] }
    }

    pub fn values(&self) -> &[Option<Symbol>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mask_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Whether `leaves` agrees with every observed entry.
    pub fn admits(&self, leaves: &[Symbol]) -> bool {
        leaves.len() == self.values.len()
            && self.values.iter().zip(leaves).all(|(o, &x)| o.map_or(true, |o| o == x))
    }

    fn check(&self, grammar: &Grammar) -> Result<()> {
        let d = grammar.leaf_count();
        if self.values.len() != d {
            return Err(Error::ShapeMismatch { expected: d, found: self.values.len() });
        }
        let v = grammar.v();
        match self.values.iter().flatten().find(|&&x| x as usize >= v) {
            Some(&bad) => Err(Error::SymbolOutOfRange { symbol: bad as usize, v }),
            None => Ok(()),
        }
    }
}

/// Upward message of one node.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Fully observed subtree: indicator of its unique parse.
    Known(Symbol),
    /// Fully masked subtree: uniform.
    Free,
    /// Mixed subtree: `exp(log_scale) * weights`, with `max(weights) == 1`.
    Weights { weights: Vec<f64>, log_scale: f64 },
}

impl Message {
    #[inline]
    pub fn weight(&self, a: Symbol) -> f64 {
        match self {
            Message::Known(k) => (*k == a) as u8 as f64,
            Message::Free => 1.0,
            Message::Weights { weights, .. } => weights[a as usize],
        }
    }

    pub fn to_dense(&self, v: usize) -> Vec<f64> {
        (0..v).map(|a| self.weight(a as Symbol)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct MessageSet {
    /// `levels[ℓ][i]`, same layout as [`TreeSample`].
    levels: Vec<Vec<Message>>,
    /// Log of the per-symbol weight of a `Free` node, by level.
    free_log_weight: Vec<f64>,
}

impl MessageSet {
    pub fn message(&self, level: usize, position: usize) -> &Message {
        &self.levels[level][position]
    }

    pub fn root(&self) -> &Message {
        &self.levels[self.levels.len() - 1][0]
    }

    fn log_scale(&self, level: usize, position: usize) -> f64 {
        match &self.levels[level][position] {
            Message::Known(_) => 0.0,
            Message::Free => self.free_log_weight[level],
            Message::Weights { log_scale, .. } => *log_scale,
        }
    }

    /// Natural log of the number of valid sentences agreeing with the observed leaves.
    pub fn log_completions(&self, v: usize) -> f64 {
        let top = self.levels.len() - 1;
        let mass = match self.root() {
            Message::Known(_) => 1.0,
            Message::Free => v as f64,
            Message::Weights { weights, .. } => weights.iter().sum(),
        };
        self.log_scale(top, 0) + mass.ln()
    }
}

/// Outcome of parsing a fully observed sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parse {
    Valid(TreeSample),
    /// No parent exists for the tuple under node `position` of `level`.
    Invalid { level: usize, position: usize },
}

impl Parse {
    pub fn tree(self) -> Option<TreeSample> {
        match self {
            Parse::Valid(t) => Some(t),
            Parse::Invalid { .. } => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, Parse::Valid(_))
    }
}

/// Bottom-up reverse lookup of the unique latent tree.
pub fn parse(grammar: &Grammar, leaves: &[Symbol]) -> Result<Parse> {
    let d = grammar.leaf_count();
    if leaves.len() != d {
        return Err(Error::ShapeMismatch { expected: d, found: leaves.len() });
    }
    if let Some(&bad) = leaves.iter().find(|&&x| x as usize >= grammar.v()) {
        return Err(Error::SymbolOutOfRange { symbol: bad as usize, v: grammar.v() });
    }
    let mut levels = vec![leaves.to_vec()];
    for level in 1..=grammar.depth() {
        let table = grammar.rules(level);
        let mut above = Vec::with_capacity(levels[level - 1].len() / grammar.s());
        for (position, kids) in levels[level - 1].chunks_exact(grammar.s()).enumerate() {
            match table.lookup(kids) {
                Some((parent, _)) => above.push(parent),
                None => return Ok(Parse::Invalid { level, position }),
            }
        }
        levels.push(above);
    }
    Ok(Parse::Valid(TreeSample { levels }))
}

pub fn upward_pass(grammar: &Grammar, masked: &MaskedLeaves) -> Result<MessageSet> {
    masked.check(grammar)?;
    let (v, s, m, depth) = (grammar.v(), grammar.s(), grammar.m(), grammar.depth());

    let mut free_log_weight = vec![0.0; depth + 1];
    for level in 1..=depth {
        free_log_weight[level] = (m as f64).ln() + s as f64 * free_log_weight[level - 1];
    }
    let mut set = MessageSet {
        levels: Vec::with_capacity(depth + 1),
        free_log_weight,
    };
    set.levels.push(
        masked
            .values()
            .iter()
            .map(|o| o.map_or(Message::Free, Message::Known))
            .collect(),
    );

    let mut tuple = vec![0 as Symbol; s];
    for level in 1..=depth {
        let table = grammar.rules(level);
        let width = grammar.params().level_width(level);
        let mut messages = Vec::with_capacity(width);
        for position in 0..width {
            let kids = &set.levels[level - 1][position * s..(position + 1) * s];
            let message = if kids.iter().all(|k| matches!(k, Message::Known(_))) {
                for (slot, k) in tuple.iter_mut().zip(kids) {
                    if let Message::Known(x) = k {
                        *slot = *x;
                    }
                }
                match table.lookup(&tuple) {
                    Some((parent, _)) => Message::Known(parent),
                    None => return Err(Error::Inconsistent { level, position }),
                }
            } else if kids.iter().all(|k| matches!(k, Message::Free)) {
                Message::Free
            } else {
                let mut weights = vec![0.0; v];
                for (a, w) in weights.iter_mut().enumerate() {
                    *w = table
                        .rules_of(a as Symbol)
                        .chunks_exact(s)
                        .map(|rule| rule.iter().zip(kids).map(|(&c, k)| k.weight(c)).product::<f64>())
                        .sum();
                }
                let max = weights.iter().cloned().fold(0.0, f64::max);
                if max <= 0.0 {
                    return Err(Error::Inconsistent { level, position });
                }
                weights.iter_mut().for_each(|w| *w /= max);
                let log_scale = (0..s).map(|j| set.log_scale(level - 1, position * s + j)).sum::<f64>() + max.ln();
                Message::Weights { weights, log_scale }
            };
            messages.push(message);
        }
        set.levels.push(messages);
    }
    Ok(set)
}

fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // Rounding left `u` past the end; fall back to the last positive weight.
    weights.iter().rposition(|&w| w > 0.0).expect("weights have positive mass")
}

/// Draw a tree from the exact posterior given the messages of an upward pass.
pub fn sample_from_messages<R: Rng + ?Sized>(grammar: &Grammar, messages: &MessageSet, rng: &mut R) -> TreeSample {
    let (v, s, m, depth) = (grammar.v(), grammar.s(), grammar.m(), grammar.depth());
    let mut levels: Vec<Vec<Symbol>> = vec![Vec::new(); depth + 1];
    let root = match messages.root() {
        Message::Known(a) => *a,
        Message::Free => rng.random_range(0..v) as Symbol,
        Message::Weights { weights, .. } => categorical(weights, rng) as Symbol,
    };
    levels[depth] = vec![root];
    let mut rule_weights = vec![0.0; m];
    for level in (1..=depth).rev() {
        let table = grammar.rules(level);
        let mut below = Vec::with_capacity(levels[level].len() * s);
        for (position, &parent) in levels[level].iter().enumerate() {
            let kids = &messages.levels[level - 1][position * s..(position + 1) * s];
            let rule = match messages.message(level, position) {
                Message::Known(_) => known_rule(table, kids),
                Message::Free => rng.random_range(0..m),
                Message::Weights { .. } => {
                    for (r, w) in rule_weights.iter_mut().enumerate() {
                        *w = table
                            .rule(parent, r)
                            .iter()
                            .zip(kids)
                            .map(|(&c, k)| k.weight(c))
                            .product();
                    }
                    categorical(&rule_weights, rng)
                }
            };
            below.extend_from_slice(table.rule(parent, rule));
        }
        levels[level - 1] = below;
    }
    TreeSample { levels }
}

/// Rule index of a node whose children are all `Known`.
fn known_rule(table: &LevelRules, kids: &[Message]) -> usize {
    let tuple: Vec<Symbol> = kids
        .iter()
        .map(|k| match k {
            Message::Known(x) => *x,
            _ => unreachable!("known parent with unknown child"),
        })
        .collect();
    table.lookup(&tuple).expect("known parent has a rule").1
}

/// Sample `x ~ p(x | masked)` exactly.
pub fn posterior_sample<R: Rng + ?Sized>(grammar: &Grammar, masked: &MaskedLeaves, rng: &mut R) -> Result<TreeSample> {
    let messages = upward_pass(grammar, masked)?;
    Ok(sample_from_messages(grammar, &messages, rng))
}

/// Probability that [`posterior_sample`] returns `target`.
///
/// Walks the same root and rule choices the sampler makes; zero if `target`
/// is not a valid tree or disagrees with the observed leaves.
pub fn posterior_probability(grammar: &Grammar, masked: &MaskedLeaves, target: &TreeSample) -> Result<f64> {
    let messages = upward_pass(grammar, masked)?;
    Ok(probability_from_messages(grammar, masked, &messages, target))
}

pub fn probability_from_messages(
    grammar: &Grammar,
    masked: &MaskedLeaves,
    messages: &MessageSet,
    target: &TreeSample,
) -> f64 {
    if !masked.admits(target.leaves()) || !grammar.is_consistent(target) {
        return 0.0;
    }
    let (v, s, m, depth) = (grammar.v(), grammar.s(), grammar.m(), grammar.depth());
    let root = target.root();
    let mut p = match messages.root() {
        Message::Known(a) => (*a == root) as u8 as f64,
        Message::Free => 1.0 / v as f64,
        Message::Weights { weights, .. } => weights[root as usize] / weights.iter().sum::<f64>(),
    };
    for level in (1..=depth).rev() {
        let table = grammar.rules(level);
        for (position, &parent) in target.level(level).iter().enumerate() {
            let kids = &messages.levels[level - 1][position * s..(position + 1) * s];
            let chosen = &target.level(level - 1)[position * s..(position + 1) * s];
            p *= match messages.message(level, position) {
                Message::Known(_) => 1.0,
                Message::Free => 1.0 / m as f64,
                Message::Weights { .. } => {
                    let weight = |rule: &[Symbol]| -> f64 { rule.iter().zip(kids).map(|(&c, k)| k.weight(c)).product() };
                    let total: f64 = (0..m).map(|r| weight(table.rule(parent, r))).sum();
                    weight(chosen) / total
                }
            };
        }
    }
    p
}

/// Exact single-node posterior marginals, `levels[ℓ][i][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub levels: Vec<Vec<Vec<f64>>>,
}

impl Marginals {
    pub fn node(&self, level: usize, position: usize) -> &[f64] {
        &self.levels[level][position]
    }

    /// Largest absolute entrywise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Marginals) -> f64 {
        if self.levels.len() != other.levels.len() {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.levels.iter().zip(&other.levels) {
            if a.len() != b.len() {
                return f64::INFINITY;
            }
            for (x, y) in a.iter().zip(b) {
                for (p, q) in x.iter().zip(y) {
                    worst = worst.max((p - q).abs());
                }
            }
        }
        worst
    }
}

fn normalize(values: &mut [f64]) {
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|x| *x /= total);
}

/// Upward messages combined with a downward (outside) pass.
pub fn posterior_marginals(grammar: &Grammar, masked: &MaskedLeaves) -> Result<Marginals> {
    let messages = upward_pass(grammar, masked)?;
    let (v, s, depth) = (grammar.v(), grammar.s(), grammar.depth());
    let up: Vec<Vec<Vec<f64>>> = messages
        .levels
        .iter()
        .map(|level| level.iter().map(|msg| msg.to_dense(v)).collect())
        .collect();

    let mut outside: Vec<Vec<Vec<f64>>> = vec![Vec::new(); depth + 1];
    outside[depth] = vec![vec![1.0; v]];
    for level in (1..=depth).rev() {
        let table = grammar.rules(level);
        let width = grammar.params().level_width(level);
        let mut below = vec![vec![0.0; v]; width * s];
        for position in 0..width {
            let kids = &up[level - 1][position * s..(position + 1) * s];
            let out_parent = &outside[level][position];
            let block = &mut below[position * s..(position + 1) * s];
            for (b, &ob) in out_parent.iter().enumerate() {
                if ob == 0.0 {
                    continue;
                }
                for rule in table.rules_of(b as Symbol).chunks_exact(s) {
                    for j in 0..s {
                        let others: f64 = (0..s).filter(|&i| i != j).map(|i| kids[i][rule[i] as usize]).product();
                        block[j][rule[j] as usize] += ob * others;
                    }
                }
            }
            for out in block.iter_mut() {
                let max = out.iter().cloned().fold(0.0, f64::max);
                if max > 0.0 {
                    out.iter_mut().for_each(|x| *x /= max);
                }
            }
        }
        outside[level - 1] = below;
    }

    let levels = up
        .iter()
        .zip(&outside)
        .map(|(ups, outs)| {
            ups.iter()
                .zip(outs)
                .map(|(u, o)| {
                    let mut p: Vec<f64> = u.iter().zip(o).map(|(a, b)| a * b).collect();
                    normalize(&mut p);
                    p
                })
                .collect()
        })
        .collect();
    Ok(Marginals { levels })
}
