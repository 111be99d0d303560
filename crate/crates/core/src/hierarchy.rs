//! Sense hierarchies (PDTB-2 and PDTB-3) loaded from data documents.
//!
//! A hierarchy has three levels. Level-2 senses are either symmetric, in which
//! case they are terminal, or asymmetric, in which case annotation always
//! reaches one of their level-3 directionality variants. The document also
//! carries the classification allow-lists that define classifier output
//! spaces at level 1 and level 2.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PDTB2_DOC: &str = include_str!("../data/pdtb2.json");
const PDTB3_DOC: &str = include_str!("../data/pdtb3.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Version {
    Pdtb2,
    Pdtb3,
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Version::Pdtb2 => "pdtb2",
            Version::Pdtb3 => "pdtb3",
        })
    }
}

impl FromStr for Version {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pdtb2" => Ok(Version::Pdtb2),
            "pdtb3" => Ok(Version::Pdtb3),
            other => Err(Error::Usage(format!(
                "unknown hierarchy version `{other}` (expected pdtb2 or pdtb3)"
            ))),
        }
    }
}

/// Classification level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    L1,
    L2,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::L1 => "l1",
            Level::L2 => "l2",
        })
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" | "1" => Ok(Level::L1),
            "l2" | "2" => Ok(Level::L2),
            other => Err(Error::Usage(format!("unknown level `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SenseNode {
    pub name: String,
    pub level: u8,
    /// Only meaningful on level-2 nodes.
    pub symmetric: bool,
    pub children: Vec<SenseNode>,
}

/// A resolved annotation label. `terminal` is the full dotted path of the
/// deepest populated level.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SenseLabel {
    pub version: Version,
    pub l1: String,
    pub l2: String,
    pub l3: Option<String>,
    pub terminal: String,
}

impl SenseLabel {
    /// Level-2 classification label, `l1.l2`, even when the terminal is level 3.
    pub fn level2(&self) -> String {
        format!("{}.{}", self.l1, self.l2)
    }

    /// Projection of the label onto a classification level.
    pub fn at_level(&self, level: Level) -> String {
        match level {
            Level::L1 => self.l1.clone(),
            Level::L2 => self.level2(),
        }
    }
}

impl fmt::Display for SenseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.terminal)
    }
}

/// True iff both labels share a level-1 sense but differ in terminal.
pub fn are_sisters(a: &SenseLabel, b: &SenseLabel) -> Result<bool> {
    if a.version != b.version {
        return Err(Error::Usage(format!(
            "cannot compare {} label `{}` with {} label `{}`",
            a.version, a.terminal, b.version, b.terminal
        )));
    }
    Ok(a.l1 == b.l1 && a.terminal != b.terminal)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    name: String,
    #[serde(default)]
    symmetric: Option<bool>,
    children: Vec<NodeDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassificationLabels {
    level1: Vec<String>,
    level2: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HierarchyDoc {
    version: Version,
    classification_labels: ClassificationLabels,
    senses: Vec<NodeDoc>,
}

#[derive(Clone, Debug)]
pub struct SenseHierarchy {
    pub version: Version,
    pub roots: Vec<SenseNode>,
    /// Terminal dotted path to label, in tree order.
    label_index: BTreeMap<String, SenseLabel>,
    terminal_order: Vec<String>,
    nonterminals: BTreeSet<String>,
    level1_classes: Vec<String>,
    level2_classes: Vec<String>,
}

impl SenseHierarchy {
    /// One of the bundled hierarchies.
    pub fn builtin(version: Version) -> Self {
        let doc = match version {
            Version::Pdtb2 => PDTB2_DOC,
            Version::Pdtb3 => PDTB3_DOC,
        };
        load_hierarchy(doc, version).expect("bundled hierarchy is valid")
    }

    pub fn pdtb2() -> Self {
        Self::builtin(Version::Pdtb2)
    }

    pub fn pdtb3() -> Self {
        Self::builtin(Version::Pdtb3)
    }

    pub fn resolve_terminal(&self, raw: &str) -> Result<SenseLabel> {
        if let Some(label) = self.label_index.get(raw) {
            return Ok(label.clone());
        }
        if self.nonterminals.contains(raw) {
            return Err(Error::NonTerminal(raw.to_string()));
        }
        Err(Error::UnknownLabel(raw.to_string()))
    }

    /// All terminal labels in tree order.
    pub fn terminals(&self) -> impl Iterator<Item = &SenseLabel> + '_ {
        self.terminal_order
            .iter()
            .map(move |t| &self.label_index[t])
    }

    pub fn num_terminals(&self) -> usize {
        self.terminal_order.len()
    }

    /// Classifier output space for a level, from the document's allow-list.
    pub fn classes(&self, level: Level) -> &[String] {
        match level {
            Level::L1 => &self.level1_classes,
            Level::L2 => &self.level2_classes,
        }
    }

    pub fn class_index(&self, level: Level, label: &str) -> Option<usize> {
        self.classes(level).iter().position(|c| c == label)
    }

    /// Every level-2 node as `l1.l2`, whether or not it is allow-listed.
    pub fn level2_nodes(&self) -> Vec<String> {
        self.roots
            .iter()
            .flat_map(|r| {
                r.children
                    .iter()
                    .map(move |c| format!("{}.{}", r.name, c.name))
            })
            .collect()
    }
}

/// Parses and validates a hierarchy document.
pub fn load_hierarchy(document: &str, version: Version) -> Result<SenseHierarchy> {
    let doc: HierarchyDoc = serde_json::from_str(document)
        .map_err(|e| Error::hierarchy("<document>", e.to_string()))?;
    if doc.version != version {
        return Err(Error::hierarchy(
            "version",
            format!(
                "document declares {} but {} was requested",
                doc.version, version
            ),
        ));
    }
    if doc.senses.is_empty() {
        return Err(Error::hierarchy("<root>", "no level-1 senses"));
    }

    let mut roots = Vec::with_capacity(doc.senses.len());
    check_siblings(&doc.senses, "<root>")?;
    for node in &doc.senses {
        roots.push(build_node(node, 1, "")?);
    }

    let mut label_index = BTreeMap::new();
    let mut terminal_order = Vec::new();
    let mut nonterminals = BTreeSet::new();
    for l1 in &roots {
        nonterminals.insert(l1.name.clone());
        for l2 in &l1.children {
            let path2 = format!("{}.{}", l1.name, l2.name);
            if l2.symmetric {
                terminal_order.push(path2.clone());
                label_index.insert(
                    path2.clone(),
                    SenseLabel {
                        version,
                        l1: l1.name.clone(),
                        l2: l2.name.clone(),
                        l3: None,
                        terminal: path2,
                    },
                );
            } else {
                for l3 in &l2.children {
                    let path3 = format!("{path2}.{}", l3.name);
                    terminal_order.push(path3.clone());
                    label_index.insert(
                        path3.clone(),
                        SenseLabel {
                            version,
                            l1: l1.name.clone(),
                            l2: l2.name.clone(),
                            l3: Some(l3.name.clone()),
                            terminal: path3,
                        },
                    );
                }
                nonterminals.insert(path2);
            }
        }
    }

    let level1_classes = doc.classification_labels.level1;
    let level2_classes = doc.classification_labels.level2;
    check_allow_list(&level1_classes, "classification_labels.level1", |c| {
        roots.iter().any(|r| &r.name == c)
    })?;
    let l2_nodes: BTreeSet<String> = roots
        .iter()
        .flat_map(|r| {
            r.children
                .iter()
                .map(move |c| format!("{}.{}", r.name, c.name))
        })
        .collect();
    check_allow_list(&level2_classes, "classification_labels.level2", |c| {
        l2_nodes.contains(c)
    })?;

    Ok(SenseHierarchy {
        version,
        roots,
        label_index,
        terminal_order,
        nonterminals,
        level1_classes,
        level2_classes,
    })
}

fn check_allow_list(
    classes: &[String],
    field: &str,
    exists: impl Fn(&String) -> bool,
) -> Result<()> {
    if classes.is_empty() {
        return Err(Error::hierarchy(field, "allow-list is empty"));
    }
    let mut seen = BTreeSet::new();
    for c in classes {
        if !seen.insert(c) {
            return Err(Error::hierarchy(field, format!("duplicate class `{c}`")));
        }
        if !exists(c) {
            return Err(Error::hierarchy(
                field,
                format!("class `{c}` is not in the tree"),
            ));
        }
    }
    Ok(())
}

fn check_siblings(nodes: &[NodeDoc], parent: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for n in nodes {
        if !seen.insert(n.name.as_str()) {
            return Err(Error::hierarchy(
                join_path(parent, &n.name),
                "duplicate sibling name",
            ));
        }
    }
    Ok(())
}

fn join_path(parent: &str, name: &str) -> String {
    if parent.is_empty() || parent == "<root>" {
        name.to_string()
    } else {
        format!("{parent}.{name}")
    }
}

fn build_node(doc: &NodeDoc, level: u8, parent: &str) -> Result<SenseNode> {
    let path = join_path(parent, &doc.name);
    if doc.name.trim().is_empty() {
        return Err(Error::hierarchy(path, "empty sense name"));
    }
    if doc.name.contains('.') {
        return Err(Error::hierarchy(path, "sense names may not contain `.`"));
    }
    if level > 3 {
        return Err(Error::hierarchy(path, "depth exceeds 3 levels"));
    }
    let symmetric = match level {
        1 => {
            if doc.children.is_empty() {
                return Err(Error::hierarchy(path, "level-1 sense has no children"));
            }
            false
        }
        2 => match doc.symmetric {
            None => {
                return Err(Error::hierarchy(
                    path,
                    "level-2 sense lacks a symmetric flag",
                ))
            }
            Some(true) if !doc.children.is_empty() => {
                return Err(Error::hierarchy(path, "symmetric sense has children"))
            }
            Some(false) if doc.children.is_empty() => {
                return Err(Error::hierarchy(
                    path,
                    "asymmetric sense has no level-3 children",
                ))
            }
            Some(s) => s,
        },
        _ => {
            if !doc.children.is_empty() {
                return Err(Error::hierarchy(
                    join_path(&path, &doc.children[0].name),
                    "depth exceeds 3 levels",
                ));
            }
            false
        }
    };
    check_siblings(&doc.children, &path)?;
    let children = doc
        .children
        .iter()
        .map(|c| build_node(c, level + 1, &path))
        .collect::<Result<Vec<_>>>()?;
    Ok(SenseNode {
        name: doc.name.clone(),
        level,
        symmetric,
        children,
    })
}
