//! Ulam-Harris labels and the ordering used to map a population to a vector.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenealogyError {
    #[error("labels {0} and {1} are in ancestor relation and cannot be compared")]
    AncestorComparison(Label, Label),
    #[error("label set is not an antichain: {0} is a strict ancestor of {1}")]
    NotAntichain(Label, Label),
    #[error("cannot parse label {0:?}")]
    Parse(String),
}

/// A finite sequence of integers; the empty path is the mother particle ∅.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(Vec<u32>);

impl Label {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn from_path(path: Vec<u32>) -> Self {
        Self(path)
    }

    pub fn path(&self) -> &[u32] {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn generation(&self) -> usize {
        self.0.len()
    }

    /// Concatenation ij.
    pub fn concat(&self, other: &Label) -> Label {
        let mut path = self.0.clone();
        path.extend_from_slice(&other.0);
        Label(path)
    }

    pub fn parent(&self) -> Option<Label> {
        let (_, head) = self.0.split_last()?;
        Some(Label(head.to_vec()))
    }
}

/// Label of the `index`-th offspring of `parent`.
pub fn child_label(parent: &Label, index: u32) -> Label {
    let mut path = parent.0.clone();
    path.push(index);
    Label(path)
}

/// True iff `i = jℓ` for some non-empty ℓ.
pub fn is_strict_ancestor(j: &Label, i: &Label) -> bool {
    j.0.len() < i.0.len() && i.0.starts_with(&j.0)
}

/// Lexicographic order at the first divergence index; defined on antichains only.
pub fn compare(i: &Label, j: &Label) -> Result<Ordering, GenealogyError> {
    if i == j {
        return Ok(Ordering::Equal);
    }
    match i.0.iter().zip(&j.0).find(|(a, b)| a != b) {
        Some((a, b)) => Ok(a.cmp(b)),
        None => Err(GenealogyError::AncestorComparison(i.clone(), j.clone())),
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("∅");
        }
        for (k, v) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str("·")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl FromStr for Label {
    type Err = GenealogyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "∅" || s.is_empty() {
            return Ok(Label::root());
        }
        s.split('·')
            .map(|part| part.parse::<u32>().map_err(|_| GenealogyError::Parse(s.to_string())))
            .collect::<Result<Vec<_>, _>>()
            .map(Label)
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A finite antichain of labels, kept sorted in the φ^V order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    members: Vec<Label>,
}

impl LabelSet {
    pub fn new(mut members: Vec<Label>) -> Result<Self, GenealogyError> {
        // derived Ord agrees with `compare` on antichains and puts ancestors
        // right before their descendants, so one adjacent pass finds violations
        members.sort();
        members.dedup();
        for w in members.windows(2) {
            if is_strict_ancestor(&w[0], &w[1]) {
                return Err(GenealogyError::NotAntichain(w[0].clone(), w[1].clone()));
            }
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Label] {
        &self.members
    }

    /// φ^V(i), 1-based.
    pub fn index_of(&self, label: &Label) -> Option<usize> {
        self.members.binary_search(label).ok().map(|k| k + 1)
    }

    /// (φ^V)^{-1}(k), 1-based.
    pub fn label_at(&self, k: usize) -> Option<&Label> {
        k.checked_sub(1).and_then(|k| self.members.get(k))
    }
}
