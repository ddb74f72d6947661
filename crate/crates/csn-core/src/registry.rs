//! Attribute registry: which (part, pattern) pair each attribute id means.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Error;
use crate::Result;

/// A named part or pattern concept.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Concept {
    pub id: usize,
    pub name: String,
}

/// One attribute: part `part` rendered with pattern `pattern`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttributeSpec {
    pub id: usize,
    pub part: usize,
    pub pattern: usize,
    pub name: String,
}

/// The full concept vocabulary. Part and pattern ids are dense (`id ==
/// index`); attribute ids are unique but may have gaps, so a registry with
/// some attributes removed still addresses the remaining ones by their
/// original ids.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConceptRegistry {
    pub parts: Vec<Concept>,
    pub patterns: Vec<Concept>,
    pub attributes: Vec<AttributeSpec>,
}

impl ConceptRegistry {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.parts.iter().enumerate() {
            if p.id != i {
                return Err(Error::InvalidConfig(format!(
                    "part ids must be dense: found id {} at index {i}",
                    p.id
                )));
            }
        }
        for (j, p) in self.patterns.iter().enumerate() {
            if p.id != j {
                return Err(Error::InvalidConfig(format!(
                    "pattern ids must be dense: found id {} at index {j}",
                    p.id
                )));
            }
        }
        for (idx, a) in self.attributes.iter().enumerate() {
            if a.part >= self.parts.len() {
                return Err(Error::UnknownId { what: "part", id: a.part });
            }
            if a.pattern >= self.patterns.len() {
                return Err(Error::UnknownId { what: "pattern", id: a.pattern });
            }
            for other in &self.attributes[..idx] {
                if other.id == a.id {
                    return Err(Error::InvalidConfig(format!(
                        "duplicate attribute id {}",
                        a.id
                    )));
                }
                if other.part == a.part && other.pattern == a.pattern {
                    return Err(Error::InvalidConfig(format!(
                        "attributes {} and {} both bind part {} to pattern {}",
                        other.id, a.id, a.part, a.pattern
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn attribute(&self, id: usize) -> Result<&AttributeSpec> {
        self.attributes
            .iter()
            .find(|a| a.id == id)
            .ok_or(Error::UnknownId { what: "attribute", id })
    }

    pub fn has_attribute(&self, part: usize, pattern: usize) -> bool {
        self.attributes
            .iter()
            .any(|a| a.part == part && a.pattern == pattern)
    }

    /// Attributes whose part is `part`.
    pub fn attributes_with_part(&self, part: usize) -> impl Iterator<Item = &AttributeSpec> {
        self.attributes.iter().filter(move |a| a.part == part)
    }

    /// Attributes whose pattern is `pattern`.
    pub fn attributes_with_pattern(&self, pattern: usize) -> impl Iterator<Item = &AttributeSpec> {
        self.attributes.iter().filter(move |a| a.pattern == pattern)
    }

    pub fn next_attribute_id(&self) -> usize {
        self.attributes.iter().map(|a| a.id + 1).max().unwrap_or(0)
    }

    /// Copy of the registry keeping only attributes outside `excluded`
    /// (part, pattern) pairs. Retained attributes keep their ids.
    pub fn without_pairs(&self, excluded: &[(usize, usize)]) -> ConceptRegistry {
        ConceptRegistry {
            parts: self.parts.clone(),
            patterns: self.patterns.clone(),
            attributes: self
                .attributes
                .iter()
                .filter(|a| !excluded.contains(&(a.part, a.pattern)))
                .cloned()
                .collect(),
        }
    }
}
