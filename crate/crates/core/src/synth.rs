//! Deterministic synthetic corpora over a sense hierarchy.
//!
//! Each token of an argument is drawn from one of three vocabularies:
//! a pool shared by every label (`cross_share`), a pool shared by the
//! label's level-1 family (`sister_share`), or the terminal label's own
//! pool (the remainder). Sister labels therefore overlap more than labels
//! from different level-1 senses. The family pool is large, so family
//! tokens carry level-1 signal but little that separates sisters.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Provenance, RelationExample};
use crate::error::{Error, Result};
use crate::hierarchy::{SenseHierarchy, SenseLabel};

/// Sections are assigned round-robin over 0..=22.
const NUM_SECTIONS: usize = 23;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub per_class: usize,
    pub seed: u64,
    /// Fraction of relations given a second sense from another level-1 sense.
    pub noise: f64,
    pub sister_share: f64,
    pub cross_share: f64,
    pub shared_vocab: usize,
    pub family_vocab: usize,
    pub label_vocab: usize,
    pub connectives_per_label: usize,
    pub min_arg_len: usize,
    pub max_arg_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            per_class: 20,
            seed: 0,
            noise: 0.0,
            sister_share: 0.5,
            cross_share: 0.1,
            shared_vocab: 60,
            family_vocab: 1000,
            label_vocab: 10,
            connectives_per_label: 3,
            min_arg_len: 6,
            max_arg_len: 12,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_class < 1 {
            return Err(Error::Config("per_class must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config(format!(
                "noise must be in [0,1], got {}",
                self.noise
            )));
        }
        let shares_ok = self.sister_share >= 0.0
            && self.cross_share >= 0.0
            && self.sister_share + self.cross_share <= 1.0;
        if !shares_ok {
            return Err(Error::Config(
                "vocabulary shares must be non-negative and sum to <= 1".into(),
            ));
        }
        if self.shared_vocab == 0 || self.family_vocab == 0 || self.label_vocab == 0 {
            return Err(Error::Config("vocabulary sizes must be positive".into()));
        }
        if self.connectives_per_label < 2 {
            return Err(Error::Config(
                "need at least two connectives per label".into(),
            ));
        }
        if self.min_arg_len == 0 || self.min_arg_len > self.max_arg_len {
            return Err(Error::Config("invalid argument length range".into()));
        }
        Ok(())
    }
}

pub fn generate(h: Arc<SenseHierarchy>, per_class: usize, seed: u64, noise: f64) -> Result<Corpus> {
    generate_with(
        h,
        &SynthConfig {
            per_class,
            seed,
            noise,
            ..SynthConfig::default()
        },
    )
}

pub fn generate_with(h: Arc<SenseHierarchy>, cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let terminals: Vec<SenseLabel> = h.terminals().cloned().collect();
    let families: Vec<String> = h.roots.iter().map(|r| r.name.clone()).collect();
    let family_of = |l: &SenseLabel| families.iter().position(|f| f == &l.l1).expect("known l1");

    let mut examples = Vec::with_capacity(terminals.len() * cfg.per_class);
    for (t, label) in terminals.iter().enumerate() {
        let fam = family_of(label);
        for k in 0..cfg.per_class {
            let index = examples.len();
            let arg1 = sentence(&mut rng, cfg, t, fam);
            let arg2 = sentence(&mut rng, cfg, t, fam);
            let mut senses = vec![label.clone()];
            let mut connectives = Vec::with_capacity(2);
            let own = connective_list(t, cfg.connectives_per_label);
            if rng.gen_bool(cfg.noise) {
                let others: Vec<usize> = (0..terminals.len())
                    .filter(|&o| terminals[o].l1 != label.l1)
                    .collect();
                if let Some(&o) = others.choose(&mut rng) {
                    senses.push(terminals[o].clone());
                    connectives.push(own.choose(&mut rng).expect("non-empty").clone());
                    let theirs = connective_list(o, cfg.connectives_per_label);
                    connectives.push(theirs.choose(&mut rng).expect("non-empty").clone());
                }
            }
            if connectives.is_empty() {
                let n = if rng.gen_bool(0.5) { 1 } else { 2 };
                connectives.extend(own.choose_multiple(&mut rng, n).cloned());
            }
            examples.push(RelationExample {
                rel_id: format!("syn-{}-{:05}-{k}", h.version, index),
                arg1,
                arg2,
                senses,
                connectives,
                section: (index % NUM_SECTIONS) as u8,
                provenance: Provenance::Original,
                inserted_connective: None,
                sense_index: None,
            });
        }
    }
    Ok(Corpus::new(h, examples))
}

fn connective_list(terminal: usize, n: usize) -> Vec<String> {
    (0..n)
        .map(|i| format!("conn{terminal}{}", (b'a' + i as u8) as char))
        .collect()
}

fn sentence(rng: &mut ChaCha8Rng, cfg: &SynthConfig, terminal: usize, family: usize) -> String {
    let len = rng.gen_range(cfg.min_arg_len..=cfg.max_arg_len);
    let mut words = Vec::with_capacity(len);
    for _ in 0..len {
        let u: f64 = rng.gen();
        let w = if u < cfg.cross_share {
            format!("g{}", rng.gen_range(0..cfg.shared_vocab))
        } else if u < cfg.cross_share + cfg.sister_share {
            format!("f{family}x{}", rng.gen_range(0..cfg.family_vocab))
        } else {
            format!("t{terminal}x{}", rng.gen_range(0..cfg.label_vocab))
        };
        words.push(w);
    }
    let mut s = words.join(" ");
    if let Some(first) = s.get(0..1) {
        let upper = first.to_uppercase();
        s.replace_range(0..1, &upper);
    }
    s
}
