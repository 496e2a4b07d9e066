//! Random Hierarchy Model instances.
//!
//! A grammar lives on a regular tree of depth `L` and branching `s`. Levels are
//! counted from the leaves: level 0 is the visible sequence of `d = s^L`
//! symbols, level `L` is the root. Every symbol at level `ℓ ≥ 1` owns `m`
//! production rules, each an `s`-tuple of symbols at level `ℓ - 1`. No tuple is
//! shared between two parents at the same level, so each valid sentence has a
//! unique latent tree.
//!
//! Symbols are stored 0-based (`0..v`).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, SimRng, Stream};

pub type Symbol = u16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarParams {
    /// Alphabet size.
    pub v: usize,
    /// Branching factor.
    pub s: usize,
    /// Tree depth `L`.
    pub depth: usize,
    /// Rules per symbol.
    pub m: usize,
    pub seed: u64,
    /// Use one rule table for every level instead of independent tables.
    #[serde(default)]
    pub shared_rules: bool,
}

impl GrammarParams {
    pub fn new(v: usize, s: usize, depth: usize, m: usize, seed: u64) -> Self {
        Self { v, s, depth, m, seed, shared_rules: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.v < 2 {
            return Err(Error::InvalidParams(format!("v = {} must be at least 2", self.v)));
        }
        if self.v > Symbol::MAX as usize {
            return Err(Error::InvalidParams(format!("v = {} exceeds {}", self.v, Symbol::MAX)));
        }
        if self.s < 2 {
            return Err(Error::InvalidParams(format!("s = {} must be at least 2", self.s)));
        }
        if self.depth < 1 {
            return Err(Error::InvalidParams("depth must be at least 1".into()));
        }
        if self.m < 1 {
            return Err(Error::InvalidParams("m must be at least 1".into()));
        }
        let tuples = self
            .tuple_space()
            .ok_or_else(|| Error::InvalidParams(format!("v^s = {}^{} overflows", self.v, self.s)))?;
        let max = tuples / self.v as u64;
        if self.m as u64 > max {
            return Err(Error::Ambiguous { m: self.m, max });
        }
        (self.s as u64)
            .checked_pow(self.depth as u32)
            .filter(|&d| d <= u32::MAX as u64)
            .ok_or_else(|| Error::InvalidParams("s^L overflows".into()))?;
        Ok(())
    }

    /// Number of possible child tuples, `v^s`.
    pub fn tuple_space(&self) -> Option<u64> {
        (self.v as u64).checked_pow(self.s as u32)
    }

    /// `f = m / v^(s-1)`.
    pub fn rule_density(&self) -> f64 {
        self.m as f64 / (self.v as f64).powi(self.s as i32 - 1)
    }

    /// Number of leaves `d = s^L`.
    pub fn leaf_count(&self) -> usize {
        self.s.pow(self.depth as u32)
    }

    pub fn level_width(&self, level: usize) -> usize {
        self.s.pow((self.depth - level) as u32)
    }

    /// Internal nodes `I = (s^L - 1) / (s - 1)`.
    pub fn internal_nodes(&self) -> usize {
        (self.leaf_count() - 1) / (self.s - 1)
    }

    /// Number of valid sentences `v * m^I`, as a float since it overflows quickly.
    pub fn sentence_count(&self) -> f64 {
        self.v as f64 * (self.m as f64).powf(self.internal_nodes() as f64)
    }
}

/// Rules mapping parents at one level to child tuples at the level below.
#[derive(Debug, Clone)]
pub struct LevelRules {
    v: usize,
    s: usize,
    m: usize,
    /// Flat `[parent][rule][child]`.
    children: Vec<Symbol>,
    /// Tuple key to `parent * m + rule`.
    reverse: HashMap<u64, u32>,
}

impl PartialEq for LevelRules {
    fn eq(&self, other: &Self) -> bool {
        self.v == other.v && self.s == other.s && self.m == other.m && self.children == other.children
    }
}

impl Eq for LevelRules {}

impl LevelRules {
    fn from_children(v: usize, s: usize, m: usize, children: Vec<Symbol>) -> Result<Self> {
        if children.len() != v * m * s {
            return Err(Error::MalformedDocument(format!(
                "rule table has {} symbols, expected {}",
                children.len(),
                v * m * s
            )));
        }
        if let Some(&bad) = children.iter().find(|&&c| c as usize >= v) {
            return Err(Error::SymbolOutOfRange { symbol: bad as usize, v });
        }
        let mut reverse = HashMap::with_capacity(v * m);
        for (slot, tuple) in children.chunks_exact(s).enumerate() {
            if reverse.insert(tuple_key(tuple, v), slot as u32).is_some() {
                return Err(Error::MalformedDocument(format!(
                    "child tuple {tuple:?} appears twice; grammar is ambiguous"
                )));
            }
        }
        Ok(Self { v, s, m, children, reverse })
    }

    fn sample(v: usize, s: usize, m: usize, rng: &mut SimRng) -> Self {
        let space = (v as u64).pow(s as u32);
        // `index::sample` returns the draws in random order, so consecutive
        // blocks of `m` form a uniform partition among parents.
        let picks = index::sample(rng, space as usize, v * m);
        let mut children = Vec::with_capacity(v * m * s);
        for key in picks.iter() {
            let mut rest = key as u64;
            for _ in 0..s {
                children.push((rest % v as u64) as Symbol);
                rest /= v as u64;
            }
        }
        Self::from_children(v, s, m, children).expect("distinct draws give an unambiguous table")
    }

    #[inline]
    pub fn rule(&self, parent: Symbol, rule: usize) -> &[Symbol] {
        let start = (parent as usize * self.m + rule) * self.s;
        &self.children[start..start + self.s]
    }

    /// All `m` rules of `parent`, flat.
    #[inline]
    pub fn rules_of(&self, parent: Symbol) -> &[Symbol] {
        let start = parent as usize * self.m * self.s;
        &self.children[start..start + self.m * self.s]
    }

    /// Unique `(parent, rule index)` producing `tuple`, if any.
    #[inline]
    pub fn lookup(&self, tuple: &[Symbol]) -> Option<(Symbol, usize)> {
        self.reverse
            .get(&tuple_key(tuple, self.v))
            .map(|&slot| ((slot as usize / self.m) as Symbol, slot as usize % self.m))
    }

    pub fn reverse_len(&self) -> usize {
        self.reverse.len()
    }
}

#[inline]
fn tuple_key(tuple: &[Symbol], v: usize) -> u64 {
    tuple.iter().rev().fold(0u64, |acc, &c| acc * v as u64 + c as u64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    params: GrammarParams,
    /// `levels[ℓ - 1]` expands parents at level `ℓ`.
    levels: Vec<LevelRules>,
}

/// On-disk form of a grammar.
#[derive(Debug, Serialize, Deserialize)]
struct GrammarDocument {
    format: String,
    version: u32,
    params: GrammarParams,
    /// `rules[ℓ - 1][parent][rule]` is a child tuple.
    rules: Vec<Vec<Vec<Vec<Symbol>>>>,
}

const DOCUMENT_FORMAT: &str = "rhm-grammar";

impl Grammar {
    /// Sample a grammar from `params.seed`. Deterministic.
    pub fn sample(params: &GrammarParams) -> Result<Self> {
        params.validate()?;
        let mut rng = stream_rng(params.seed, Stream::Grammar, &[]);
        let GrammarParams { v, s, m, depth, .. } = *params;
        let levels = if params.shared_rules {
            let table = LevelRules::sample(v, s, m, &mut rng);
            vec![table; depth]
        } else {
            (0..depth).map(|_| LevelRules::sample(v, s, m, &mut rng)).collect()
        };
        Ok(Self { params: params.clone(), levels })
    }

    pub fn params(&self) -> &GrammarParams {
        &self.params
    }

    pub fn v(&self) -> usize {
        self.params.v
    }

    pub fn s(&self) -> usize {
        self.params.s
    }

    pub fn m(&self) -> usize {
        self.params.m
    }

    pub fn depth(&self) -> usize {
        self.params.depth
    }

    pub fn leaf_count(&self) -> usize {
        self.params.leaf_count()
    }

    /// Rules expanding parents at `level` (`1..=L`).
    #[inline]
    pub fn rules(&self, level: usize) -> &LevelRules {
        &self.levels[level - 1]
    }

    /// Draw a sentence together with its latent tree.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> TreeSample {
        let (v, s, m, depth) = (self.v(), self.s(), self.m(), self.depth());
        let mut levels = vec![Vec::new(); depth + 1];
        levels[depth] = vec![rng.random_range(0..v) as Symbol];
        for level in (1..=depth).rev() {
            let table = self.rules(level);
            let mut below = Vec::with_capacity(levels[level].len() * s);
            for &parent in &levels[level] {
                below.extend_from_slice(table.rule(parent, rng.random_range(0..m)));
            }
            levels[level - 1] = below;
        }
        TreeSample { levels }
    }

    /// Whether `x` has the right shape and every internal node expands by one of its rules.
    pub fn is_consistent(&self, x: &TreeSample) -> bool {
        if x.levels.len() != self.depth() + 1 {
            return false;
        }
        if (0..=self.depth()).any(|l| x.levels[l].len() != self.params.level_width(l)) {
            return false;
        }
        (1..=self.depth()).all(|level| {
            let table = self.rules(level);
            x.levels[level].iter().zip(x.levels[level - 1].chunks_exact(self.s())).all(
                |(&parent, kids)| matches!(table.lookup(kids), Some((p, _)) if p == parent),
            )
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let rules = self
            .levels
            .iter()
            .map(|table| {
                (0..self.v())
                    .map(|p| (0..self.m()).map(|r| table.rule(p as Symbol, r).to_vec()).collect())
                    .collect()
            })
            .collect();
        let doc = GrammarDocument {
            format: DOCUMENT_FORMAT.into(),
            version: 1,
            params: self.params.clone(),
            rules,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GrammarDocument = serde_json::from_str(text)?;
        if doc.format != DOCUMENT_FORMAT {
            return Err(Error::MalformedDocument(format!("unknown format {:?}", doc.format)));
        }
        doc.params.validate()?;
        let GrammarParams { v, s, m, depth, .. } = doc.params;
        if doc.rules.len() != depth {
            return Err(Error::MalformedDocument(format!(
                "{} rule levels for depth {depth}",
                doc.rules.len()
            )));
        }
        let mut levels = Vec::with_capacity(depth);
        for level in doc.rules {
            if level.len() != v || level.iter().any(|p| p.len() != m || p.iter().any(|t| t.len() != s)) {
                return Err(Error::MalformedDocument("rule table has the wrong shape".into()));
            }
            let flat = level.into_iter().flatten().flatten().collect();
            levels.push(LevelRules::from_children(v, s, m, flat)?);
        }
        Ok(Self { params: doc.params, levels })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Every variable of the tree, stored leaves-up: `levels[0]` is the visible
/// sequence and `levels[L]` holds the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeSample {
    pub levels: Vec<Vec<Symbol>>,
}

impl TreeSample {
    pub fn leaves(&self) -> &[Symbol] {
        &self.levels[0]
    }

    pub fn root(&self) -> Symbol {
        self.levels[self.depth()][0]
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, level: usize) -> &[Symbol] {
        &self.levels[level]
    }
}
