use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::directive::{Backend, Issuer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyClass {
    FusedKernel,
    StreamOverlap,
    SplitPutWait,
    Other,
}

impl StrategyClass {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyClass::FusedKernel => "fused-kernel",
            StrategyClass::StreamOverlap => "stream-overlap",
            StrategyClass::SplitPutWait => "split-put-wait",
            StrategyClass::Other => "other",
        }
    }

    pub fn parse(s: &str) -> StrategyClass {
        match s {
            "fused-kernel" => StrategyClass::FusedKernel,
            "stream-overlap" => StrategyClass::StreamOverlap,
            "split-put-wait" => StrategyClass::SplitPutWait,
            _ => StrategyClass::Other,
        }
    }
}

impl fmt::Display for StrategyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const RULES: [(StrategyClass, &[&str]); 3] = [
    (
        StrategyClass::FusedKernel,
        &["fused", "persistent", "megakernel", "single kernel"],
    ),
    (
        StrategyClass::StreamOverlap,
        &[
            "stream overlap",
            "stream-overlap",
            "cudastreamwaitevent",
            "comm_stream",
            "side stream",
        ],
    ),
    (
        StrategyClass::SplitPutWait,
        &["split", "early put", "early_put", "deferred wait", "deferred_wait"],
    ),
];

fn hits(text: &str, class: usize) -> usize {
    RULES[class].1.iter().map(|k| text.matches(k).count()).sum()
}

/// Keyword classification over source plus placement intent; the feedback
/// strategy summary breaks ties between equally matched classes.
pub fn classify_strategy(source: &str, placement: &str, strategy_summary: Option<&str>) -> StrategyClass {
    let text = format!("{}\n{}", source, placement).to_lowercase();
    let counts: Vec<usize> = (0..RULES.len()).map(|c| hits(&text, c)).collect();
    let max = *counts.iter().max().unwrap();
    if max == 0 {
        return strategy_summary
            .map(|s| classify_strategy("", s, None))
            .unwrap_or(StrategyClass::Other);
    }
    let tied: Vec<usize> = (0..RULES.len()).filter(|&c| counts[c] == max).collect();
    if tied.len() > 1 {
        if let Some(summary) = strategy_summary.map(str::to_lowercase) {
            if let Some(&c) = tied.iter().max_by_key(|&&c| (hits(&summary, c), std::cmp::Reverse(c))) {
                if hits(&summary, c) > 0 {
                    return RULES[c].0;
                }
            }
        }
    }
    RULES[tied[0]].0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Descriptor {
    pub backend: Backend,
    pub issuer: Issuer,
    pub strategy: StrategyClass,
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.backend, self.issuer, self.strategy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub id: String,
    pub score: f64,
}

/// MAP-Elites grid: one best candidate per descriptor cell.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    cells: BTreeMap<String, (Descriptor, Elite)>,
}

impl Archive {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, d: &Descriptor) -> Option<&Elite> {
        self.cells.get(&d.to_string()).map(|(_, e)| e)
    }

    pub fn elites(&self) -> impl Iterator<Item = (&Descriptor, &Elite)> {
        self.cells.values().map(|(d, e)| (d, e))
    }

    /// Returns true when the candidate became its cell's elite.
    pub fn insert(&mut self, d: Descriptor, id: &str, score: f64) -> bool {
        if score <= 0.0 {
            return false;
        }
        let key = d.to_string();
        match self.cells.get(&key) {
            Some((_, e)) if score <= e.score => false,
            _ => {
                self.cells.insert(
                    key,
                    (
                        d,
                        Elite {
                            id: id.to_string(),
                            score,
                        },
                    ),
                );
                true
            }
        }
    }

    /// Up to `n` distinct elites, preferring ones other than `exclude`.
    pub fn sample(&self, n: usize, exclude: Option<&str>, rng: &mut impl Rng) -> Vec<Elite> {
        let mut others: Vec<&Elite> = self
            .cells
            .values()
            .map(|(_, e)| e)
            .filter(|e| Some(e.id.as_str()) != exclude)
            .collect();
        others.shuffle(rng);
        let mut out: Vec<Elite> = others.into_iter().take(n).cloned().collect();
        if out.len() < n {
            if let Some((_, e)) = self.cells.values().find(|(_, e)| Some(e.id.as_str()) == exclude) {
                out.push(e.clone());
            }
        }
        out
    }
}
