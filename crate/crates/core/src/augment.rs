//! Connective-insertion augmentation.
//!
//! Each annotator-recorded connective yields one extra example whose Arg2
//! starts with that connective, e.g. `In contrast, bond prices rallied`.

use crate::corpus::{Provenance, RelationExample};
use crate::error::{Error, Result};

/// One augmented copy of `e` per recorded connective.
pub fn augment(e: &RelationExample) -> Result<Vec<RelationExample>> {
    if e.provenance == Provenance::Augmented {
        return Err(Error::Usage(format!(
            "example `{}` is already augmented",
            e.log_id()
        )));
    }
    if e.connectives.is_empty() {
        return Err(Error::Usage(format!(
            "example `{}` has no recorded connectives",
            e.log_id()
        )));
    }
    Ok(e.connectives
        .iter()
        .map(|conn| {
            let mut out = e.clone();
            out.arg2 = insert_connective(conn, &e.arg2);
            out.provenance = Provenance::Augmented;
            out.inserted_connective = Some(conn.clone());
            out
        })
        .collect())
}

/// Originals followed immediately by their augmented copies.
pub fn build_training_pool(train: &[RelationExample]) -> Result<Vec<RelationExample>> {
    let mut pool = Vec::with_capacity(train.len() * 3);
    for e in train {
        pool.push(e.clone());
        pool.extend(augment(e)?);
    }
    Ok(pool)
}

/// `connective + ", " + arg2`, with sentence-initial case moved onto the
/// connective.
pub fn insert_connective(connective: &str, arg2: &str) -> String {
    let conn = capitalize_first(connective.trim());
    let rest = lowercase_sentence_start(arg2.trim_start());
    format!("{conn}, {rest}")
}

fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Lowercases the first character unless the first word looks like "I" or
/// an acronym ("IBM", "U.S.").
fn lowercase_sentence_start(s: &str) -> String {
    let first_word = s.split_whitespace().next().unwrap_or("");
    let mut letters = first_word.chars().filter(|c| c.is_alphabetic());
    let keep = match (letters.next(), letters.next()) {
        (Some(a), None) => a == 'I',
        (Some(a), Some(b)) => a.is_uppercase() && b.is_uppercase(),
        _ => true,
    } || first_word.starts_with("I'");
    if keep {
        return s.to_string();
    }
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_uppercase() => c.to_lowercase().chain(chars).collect(),
        Some(c) => std::iter::once(c).chain(chars).collect(),
        None => String::new(),
    }
}
