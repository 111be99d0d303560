//! Relation records, ingestion, section splits and multi-label expansion.
//!
//! Records are stored one JSON object per line:
//!
//! ```text
//! {"rel_id":"wsj_0204.7","arg1":"...","arg2":"...","senses":["Comparison.Contrast"],"connectives":["in contrast"],"section":2}
//! ```
//!
//! Augmented records additionally carry `"provenance":"augmented"` and the
//! `inserted_connective`; expanded copies of multi-sense relations carry a
//! `sense_index`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::hierarchy::{SenseHierarchy, SenseLabel, Version};

pub const MAX_SECTION: i64 = 24;
pub const MAX_SENSES: usize = 2;
pub const MAX_CONNECTIVES: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Original,
    Augmented,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationExample {
    pub rel_id: String,
    pub arg1: String,
    pub arg2: String,
    pub senses: Vec<SenseLabel>,
    pub connectives: Vec<String>,
    pub section: u8,
    pub provenance: Provenance,
    pub inserted_connective: Option<String>,
    /// Set on single-sense copies produced by [`expand_multilabel`].
    pub sense_index: Option<usize>,
}

impl RelationExample {
    /// The sense used for training targets and pair selection.
    pub fn primary_sense(&self) -> &SenseLabel {
        &self.senses[0]
    }

    /// Identifier for logs; expanded and augmented copies get a suffix.
    pub fn log_id(&self) -> String {
        let mut id = self.rel_id.clone();
        if let Some(i) = self.sense_index {
            id.push_str(&format!("#s{i}"));
        }
        if let Some(c) = &self.inserted_connective {
            id.push_str(&format!("+{c}"));
        }
        id
    }

    pub fn to_record(&self) -> Record {
        Record {
            rel_id: self.rel_id.clone(),
            arg1: self.arg1.clone(),
            arg2: self.arg2.clone(),
            senses: self.senses.iter().map(|s| s.terminal.clone()).collect(),
            connectives: self.connectives.clone(),
            section: i64::from(self.section),
            provenance: self.provenance,
            inserted_connective: self.inserted_connective.clone(),
            sense_index: self.sense_index,
        }
    }
}

/// On-disk form of a [`RelationExample`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub rel_id: String,
    pub arg1: String,
    pub arg2: String,
    pub senses: Vec<String>,
    pub connectives: Vec<String>,
    pub section: i64,
    #[serde(default)]
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inserted_connective: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sense_index: Option<usize>,
}

impl Record {
    /// Validates the record against the hierarchy. The error string is the
    /// reject reason.
    pub fn into_example(self, h: &SenseHierarchy) -> std::result::Result<RelationExample, String> {
        if !(0..=MAX_SECTION).contains(&self.section) {
            return Err(format!("section out of range: {}", self.section));
        }
        if self.arg1.trim().is_empty() || self.arg2.trim().is_empty() {
            return Err("empty argument text".into());
        }
        if self.senses.is_empty() {
            return Err("no senses".into());
        }
        if self.senses.len() > MAX_SENSES {
            return Err(format!("too many senses: {}", self.senses.len()));
        }
        match self.provenance {
            Provenance::Original => {
                if self.connectives.is_empty() {
                    return Err("no connectives".into());
                }
                if self.connectives.len() > MAX_CONNECTIVES {
                    return Err(format!("too many connectives: {}", self.connectives.len()));
                }
                if self.inserted_connective.is_some() {
                    return Err("inserted_connective on an original record".into());
                }
            }
            Provenance::Augmented => {
                if self.inserted_connective.is_none() {
                    return Err("augmented record without inserted_connective".into());
                }
                if self.senses.len() != 1 {
                    return Err("augmented record must carry exactly one sense".into());
                }
            }
        }
        let senses = self
            .senses
            .iter()
            .map(|s| h.resolve_terminal(s).map_err(|e| e.to_string()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(RelationExample {
            rel_id: self.rel_id,
            arg1: self.arg1,
            arg2: self.arg2,
            senses,
            connectives: self.connectives,
            section: self.section as u8,
            provenance: self.provenance,
            inserted_connective: self.inserted_connective,
            sense_index: self.sense_index,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub version: Version,
    pub examples: Vec<RelationExample>,
    pub hierarchy: Arc<SenseHierarchy>,
}

impl Corpus {
    pub fn new(hierarchy: Arc<SenseHierarchy>, examples: Vec<RelationExample>) -> Self {
        Corpus {
            version: hierarchy.version,
            examples,
            hierarchy,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, out: W) -> Result<()> {
        write_examples(&self.examples, out)
    }
}

/// A rejected input line.
#[derive(Clone, Debug, PartialEq)]
pub struct Reject {
    /// 1-based input line number.
    pub line: usize,
    pub reason: String,
    /// The parsed object, or the raw line as a string if it did not parse.
    pub record: Value,
}

impl Reject {
    /// The record with `reason` and `line` fields added.
    pub fn to_json(&self) -> Value {
        let mut obj = match &self.record {
            Value::Object(m) => m.clone(),
            other => {
                let mut m = serde_json::Map::new();
                m.insert("raw".into(), other.clone());
                m
            }
        };
        obj.insert("reason".into(), Value::String(self.reason.clone()));
        obj.insert("line".into(), Value::from(self.line));
        Value::Object(obj)
    }
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub corpus: Corpus,
    pub rejects: Vec<Reject>,
}

/// Reads a record stream. Bad records are collected as rejects; only I/O
/// failures are errors.
pub fn ingest<R: BufRead>(records: R, h: Arc<SenseHierarchy>) -> Result<Ingested> {
    let mut examples = Vec::new();
    let mut rejects = Vec::new();
    for (i, line) in records.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<records>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let value: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                rejects.push(Reject {
                    line: lineno,
                    reason: format!("malformed record: {e}"),
                    record: Value::String(line),
                });
                continue;
            }
        };
        let record: Record = match serde_json::from_value(value.clone()) {
            Ok(r) => r,
            Err(e) => {
                rejects.push(Reject {
                    line: lineno,
                    reason: format!("malformed record: {e}"),
                    record: value,
                });
                continue;
            }
        };
        match record.into_example(&h) {
            Ok(e) => examples.push(e),
            Err(reason) => rejects.push(Reject {
                line: lineno,
                reason,
                record: value,
            }),
        }
    }
    Ok(Ingested {
        corpus: Corpus::new(h, examples),
        rejects,
    })
}

pub fn read_corpus_file(path: impl AsRef<Path>, h: Arc<SenseHierarchy>) -> Result<Ingested> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest(BufReader::new(file), h)
}

pub fn write_examples<W: Write>(examples: &[RelationExample], mut out: W) -> Result<()> {
    for e in examples {
        serde_json::to_writer(&mut out, &e.to_record())?;
        out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    out.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub fn write_rejects<W: Write>(rejects: &[Reject], mut out: W) -> Result<()> {
    for r in rejects {
        serde_json::to_writer(&mut out, &r.to_json())?;
        out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    out.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split `{other}`"))),
        }
    }
}

/// Sections 2-20 train, 0-1 dev, 21-22 test; anything else is unused.
pub fn split_of(section: u8) -> Option<Split> {
    match section {
        0..=1 => Some(Split::Dev),
        2..=20 => Some(Split::Train),
        21..=22 => Some(Split::Test),
        _ => None,
    }
}

#[derive(Clone, Debug, Default)]
pub struct SplitSet {
    pub train: Vec<RelationExample>,
    pub dev: Vec<RelationExample>,
    pub test: Vec<RelationExample>,
    pub warnings: Vec<String>,
}

impl SplitSet {
    pub fn get(&self, split: Split) -> &[RelationExample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

pub fn split_sections(c: &Corpus) -> SplitSet {
    let mut s = SplitSet::default();
    for e in &c.examples {
        match split_of(e.section) {
            Some(Split::Train) => s.train.push(e.clone()),
            Some(Split::Dev) => s.dev.push(e.clone()),
            Some(Split::Test) => s.test.push(e.clone()),
            None => {}
        }
    }
    for (name, v) in [("train", &s.train), ("dev", &s.dev), ("test", &s.test)] {
        if v.is_empty() {
            s.warnings.push(format!("{name} split is empty"));
        }
    }
    s
}

/// Splits every multi-sense example into single-sense copies sharing its
/// rel_id. Output keeps input order with copies adjacent.
pub fn expand_multilabel(examples: &[RelationExample]) -> Vec<RelationExample> {
    let mut out = Vec::with_capacity(examples.iter().map(|e| e.senses.len()).sum());
    for e in examples {
        if e.senses.len() <= 1 {
            out.push(e.clone());
            continue;
        }
        for (i, sense) in e.senses.iter().enumerate() {
            let mut copy = e.clone();
            copy.senses = vec![sense.clone()];
            copy.sense_index = Some(i);
            out.push(copy);
        }
    }
    out
}
