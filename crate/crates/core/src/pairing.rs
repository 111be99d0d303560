//! Label-driven positive/negative selection for the contrastive term.
//!
//! Positive identity is the terminal label: because asymmetric level-2
//! senses are always replaced by their level-3 variants, "same level-2 or
//! same level-3" reduces to "same terminal". The default strategy (`ours`)
//! takes negatives only among sister types (same level-1, different
//! terminal); rows from another level-1 sense are left out of the anchor's
//! denominator entirely. `method1`..`method4` are the alternative
//! definitions used for comparison:
//!
//! | strategy | positives            | negatives          | extra weight on       |
//! |----------|----------------------|--------------------|-----------------------|
//! | ours     | same terminal        | same l1, other terminal | -                |
//! | method1  | same terminal        | other l1           | -                     |
//! | method2  | same terminal        | other l2           | -                     |
//! | method3  | same l1              | other l1           | same-l2 positives     |
//! | method4  | same l1              | other l1           | same-terminal positives |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::SenseLabel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    Ours,
    Method1,
    Method2,
    Method3,
    Method4,
}

impl StrategyName {
    pub const ALL: [StrategyName; 5] = [
        StrategyName::Ours,
        StrategyName::Method1,
        StrategyName::Method2,
        StrategyName::Method3,
        StrategyName::Method4,
    ];
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyName::Ours => "ours",
            StrategyName::Method1 => "method1",
            StrategyName::Method2 => "method2",
            StrategyName::Method3 => "method3",
            StrategyName::Method4 => "method4",
        })
    }
}

impl FromStr for StrategyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyName::ALL
            .into_iter()
            .find(|n| n.to_string() == s)
            .ok_or_else(|| Error::Usage(format!("unknown pairing strategy `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub name: StrategyName,
    pub pos_weight: f64,
    pub neg_weight: f64,
    /// Weight for the "closer" positives of methods 3 and 4.
    pub coarse_pos_weight: f64,
}

impl Strategy {
    pub fn new(
        name: StrategyName,
        pos_weight: f64,
        neg_weight: f64,
        coarse_pos_weight: f64,
    ) -> Result<Self> {
        let s = Strategy {
            name,
            pos_weight,
            neg_weight,
            coarse_pos_weight,
        };
        s.validate()?;
        Ok(s)
    }

    /// Default weights: 1.6 on positives and 1.0 on negatives; methods 3 and 4
    /// put 1.6 and 1.3 on their closer positives over a unit baseline.
    pub fn preset(name: StrategyName) -> Self {
        let (pos, coarse) = match name {
            StrategyName::Method3 => (1.0, 1.6),
            StrategyName::Method4 => (1.0, 1.3),
            _ => (1.6, 1.6),
        };
        Strategy {
            name,
            pos_weight: pos,
            neg_weight: 1.0,
            coarse_pos_weight: coarse,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("pos_weight", self.pos_weight),
            ("neg_weight", self.neg_weight),
            ("coarse_pos_weight", self.coarse_pos_weight),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "pairing.{k} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::preset(StrategyName::Ours)
    }
}

/// Per-anchor index sets over one batch. Index lists are ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSelection {
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
    pub weights: Vec<BTreeMap<usize, f64>>,
}

impl PairSelection {
    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn weight(&self, anchor: usize, j: usize) -> Option<f64> {
        self.weights[anchor].get(&j).copied()
    }

    /// Plain supervised-contrastive selection: same terminal is positive,
    /// every other row negative, all weights 1.
    pub fn supervised(labels: &[SenseLabel]) -> Self {
        let n = labels.len();
        let mut sel = PairSelection::with_capacity(n);
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                if labels[i].terminal == labels[j].terminal {
                    sel.positives[i].push(j);
                } else {
                    sel.negatives[i].push(j);
                }
                sel.weights[i].insert(j, 1.0);
            }
        }
        sel
    }

    fn with_capacity(n: usize) -> Self {
        PairSelection {
            positives: vec![Vec::new(); n],
            negatives: vec![Vec::new(); n],
            weights: vec![BTreeMap::new(); n],
        }
    }
}

/// All other rows sharing the anchor's terminal.
pub fn select_positives(anchor: usize, labels: &[SenseLabel]) -> Vec<usize> {
    let t = &labels[anchor].terminal;
    (0..labels.len())
        .filter(|&j| j != anchor && &labels[j].terminal == t)
        .collect()
}

/// Positives under a strategy; methods 3 and 4 widen them to the whole
/// level-1 class.
pub fn positives_for(anchor: usize, labels: &[SenseLabel], s: &Strategy) -> Vec<usize> {
    match s.name {
        StrategyName::Ours | StrategyName::Method1 | StrategyName::Method2 => {
            select_positives(anchor, labels)
        }
        StrategyName::Method3 | StrategyName::Method4 => {
            let a = &labels[anchor];
            (0..labels.len())
                .filter(|&j| j != anchor && labels[j].l1 == a.l1)
                .collect()
        }
    }
}

pub fn select_negatives(anchor: usize, labels: &[SenseLabel], s: &Strategy) -> Vec<usize> {
    let a = &labels[anchor];
    let is_negative = |b: &SenseLabel| match s.name {
        StrategyName::Ours => b.l1 == a.l1 && b.terminal != a.terminal,
        StrategyName::Method2 => b.level2() != a.level2(),
        StrategyName::Method1 | StrategyName::Method3 | StrategyName::Method4 => b.l1 != a.l1,
    };
    (0..labels.len())
        .filter(|&j| j != anchor && is_negative(&labels[j]))
        .collect()
}

pub fn build_pair_selection(labels: &[SenseLabel], s: &Strategy) -> PairSelection {
    let n = labels.len();
    let mut sel = PairSelection::with_capacity(n);
    for i in 0..n {
        let pos = positives_for(i, labels, s);
        let neg = select_negatives(i, labels, s);
        let a = &labels[i];
        for &j in &pos {
            let b = &labels[j];
            let w = match s.name {
                StrategyName::Method3 if b.l2 == a.l2 => s.coarse_pos_weight,
                StrategyName::Method4 if b.terminal == a.terminal => s.coarse_pos_weight,
                _ => s.pos_weight,
            };
            sel.weights[i].insert(j, w);
        }
        for &j in &neg {
            sel.weights[i].insert(j, s.neg_weight);
        }
        sel.positives[i] = pos;
        sel.negatives[i] = neg;
    }
    sel
}
