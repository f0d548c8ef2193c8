//! The closed word list shared by the scene generator, the query parser and
//! the embedding tables.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Placeholder for a unit the query leaves unspecified.
pub const UKN: &str = "UKN";
/// Discriminative unit of a bare-noun query.
pub const SELF: &str = "SELF";

/// Word classes of the query grammar.
///
/// A token may belong to more than one class (`left` is both a location
/// word and a relation word); the parser resolves it by position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub nouns: Vec<String>,
    pub colors: Vec<String>,
    pub sizes: Vec<String>,
    pub locations: Vec<String>,
    pub relations: Vec<String>,
    pub articles: Vec<String>,
    /// Words allowed between a relation and its reference phrase (`left of`, `bigger than`).
    pub particles: Vec<String>,
    /// Verbs that may introduce a relation phrase (`standing on a table`).
    pub verbs: Vec<String>,
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

impl Default for Lexicon {
    fn default() -> Self {
        Self {
            nouns: words(&[
                "cat", "dog", "lady", "man", "kid", "shelf", "table", "ball", "box", "chair",
            ]),
            colors: words(&["red", "green", "blue", "white", "orange", "black"]),
            sizes: words(&["big", "small"]),
            locations: words(&["left", "right", "top", "bottom"]),
            relations: words(&[
                "above", "below", "left", "right", "inside", "bigger", "smaller", "on", "holding",
            ]),
            articles: words(&["a", "an", "the"]),
            particles: words(&["of", "than"]),
            verbs: words(&["standing", "sitting"]),
        }
    }
}

/// Attribute phrase marker in `lady in white`.
pub const IN: &str = "in";
/// Clause conjunction.
pub const AND: &str = "and";

impl Lexicon {
    pub fn is_noun(&self, t: &str) -> bool {
        self.nouns.iter().any(|w| w == t)
    }

    pub fn is_attribute(&self, t: &str) -> bool {
        self.colors.iter().chain(&self.sizes).any(|w| w == t)
    }

    pub fn is_location(&self, t: &str) -> bool {
        self.locations.iter().any(|w| w == t)
    }

    pub fn is_relation(&self, t: &str) -> bool {
        self.relations.iter().any(|w| w == t)
    }

    pub fn is_article(&self, t: &str) -> bool {
        self.articles.iter().any(|w| w == t)
    }

    pub fn is_particle(&self, t: &str) -> bool {
        self.particles.iter().any(|w| w == t)
    }

    pub fn is_verb(&self, t: &str) -> bool {
        self.verbs.iter().any(|w| w == t)
    }

    /// Every token that can occur in a triad, plus `UKN` and `SELF`.
    pub fn triad_tokens(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self
            .nouns
            .iter()
            .chain(&self.colors)
            .chain(&self.sizes)
            .chain(&self.locations)
            .chain(&self.relations)
            .cloned()
            .collect();
        out.insert(UKN.to_string());
        out.insert(SELF.to_string());
        out
    }

    /// Every token of the grammar, including function words.
    pub fn all_tokens(&self) -> BTreeSet<String> {
        let mut out = self.triad_tokens();
        out.extend(
            self.articles
                .iter()
                .chain(&self.particles)
                .chain(&self.verbs)
                .cloned(),
        );
        out.insert(IN.to_string());
        out.insert(AND.to_string());
        out
    }

    /// Tokens that describe object appearance (category and attributes).
    pub fn visual_tokens(&self) -> BTreeSet<String> {
        self.nouns
            .iter()
            .chain(&self.colors)
            .chain(&self.sizes)
            .cloned()
            .collect()
    }
}
