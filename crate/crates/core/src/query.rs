//! Query parsing into discriminative triads and the linguistic feature.
//!
//! The grammar is closed and small:
//!
//! ```text
//! query   := LOC                                  -- bare location word
//!          | head tail*
//! head    := [ART] LOC* ATTR* NOUN
//! tail    := ["and"] "in" ATTR
//!          | ["and"] [VERB] REL [PARTICLE] [ART] ATTR* NOUN
//! ```
//!
//! The noun of `head` is the target unit shared by every triad. Triads are
//! emitted in textual order; a reference phrase's own attributes follow the
//! relation triad that introduced it.

use crate::lexicon::{Lexicon, AND, IN, SELF, UKN};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("parse error at token {position}: expected {expected}, found {}", found.as_deref().unwrap_or("end of query"))]
    Parse {
        position: usize,
        expected: &'static str,
        found: Option<String>,
    },
    #[error("token `{0}` has no embedding")]
    UnknownToken(String),
    #[error("cannot embed an empty triad list")]
    NoTriads,
    #[error("triad count M must be at least 1")]
    ZeroSlots,
}

/// `(target unit, reference unit, discriminative unit)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triad {
    pub target: String,
    pub reference: String,
    pub discriminative: String,
}

impl Triad {
    pub fn new(target: &str, reference: &str, discriminative: &str) -> Self {
        Self {
            target: target.to_string(),
            reference: reference.to_string(),
            discriminative: discriminative.to_string(),
        }
    }

    /// Triads whose reference differs from the target describe a relation
    /// to another object.
    pub fn has_reference(&self) -> bool {
        self.target != self.reference
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

struct Parser<'a> {
    tokens: &'a [String],
    pos: usize,
    lex: &'a Lexicon,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.tokens.get(self.pos).map(String::as_str)
    }

    fn eat_if(&mut self, pred: impl Fn(&str) -> bool) -> Option<&'a str> {
        match self.peek() {
            Some(t) if pred(t) => {
                self.pos += 1;
                Some(t)
            }
            _ => None,
        }
    }

    fn err(&self, expected: &'static str) -> QueryError {
        QueryError::Parse {
            position: self.pos,
            expected,
            found: self.peek().map(str::to_string),
        }
    }

    fn expect(&mut self, pred: impl Fn(&str) -> bool, what: &'static str) -> Result<&'a str, QueryError> {
        self.eat_if(pred).ok_or_else(|| self.err(what))
    }

    fn query(&mut self) -> Result<Vec<Triad>, QueryError> {
        if self.tokens.len() == 1 && self.lex.is_location(&self.tokens[0]) {
            self.pos = 1;
            return Ok(vec![Triad::new(UKN, UKN, &self.tokens[0])]);
        }
        let lex = self.lex;
        self.eat_if(|t| lex.is_article(t));
        let mut locs = Vec::new();
        while let Some(l) = self.eat_if(|t| lex.is_location(t)) {
            locs.push(l);
        }
        let mut attrs = Vec::new();
        while let Some(a) = self.eat_if(|t| lex.is_attribute(t)) {
            attrs.push(a);
        }
        let target = self.expect(|t| lex.is_noun(t), "a noun")?;

        let mut triads: Vec<Triad> = locs
            .iter()
            .chain(&attrs)
            .map(|d| Triad::new(target, target, d))
            .collect();

        while self.peek().is_some() {
            let conj = self.eat_if(|t| t == AND).is_some();
            if self.eat_if(|t| t == IN).is_some() {
                let a = self.expect(|t| lex.is_attribute(t), "an attribute after `in`")?;
                triads.push(Triad::new(target, target, a));
                continue;
            }
            self.eat_if(|t| lex.is_verb(t));
            let rel = match self.eat_if(|t| lex.is_relation(t)) {
                Some(r) => r,
                None if conj => return Err(self.err("`in` or a relation after `and`")),
                None => return Err(self.err("`in`, `and` or a relation")),
            };
            self.eat_if(|t| lex.is_particle(t));
            self.eat_if(|t| lex.is_article(t));
            let mut ref_attrs = Vec::new();
            while let Some(a) = self.eat_if(|t| lex.is_attribute(t)) {
                ref_attrs.push(a);
            }
            let reference = self.expect(|t| lex.is_noun(t), "a reference noun")?;
            triads.push(Triad::new(target, reference, rel));
            triads.extend(ref_attrs.iter().map(|a| Triad::new(reference, reference, a)));
        }

        if triads.is_empty() {
            triads.push(Triad::new(target, target, SELF));
        }
        Ok(triads)
    }
}

/// Parse a tokenized query into triads.
pub fn parse(tokens: &[String], lex: &Lexicon) -> Result<Vec<Triad>, QueryError> {
    if tokens.is_empty() {
        return Err(QueryError::Parse {
            position: 0,
            expected: "a noun or location word",
            found: None,
        });
    }
    Parser { tokens, pos: 0, lex }.query()
}

pub fn parse_text(text: &str, lex: &Lexicon) -> Result<Vec<Triad>, QueryError> {
    parse(&tokenize(text), lex)
}

/// Seeded word vectors. Fixed after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    seed: u64,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Standard-normal vectors drawn in sorted token order.
    pub fn seeded<I, S>(tokens: I, dim: usize, seed: u64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut sorted: Vec<String> = tokens.into_iter().map(Into::into).collect();
        sorted.sort();
        sorted.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = sorted
            .into_iter()
            .map(|t| {
                let v = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                (t, v)
            })
            .collect();
        Self { dim, seed, entries }
    }

    pub fn from_entries(dim: usize, seed: u64, entries: BTreeMap<String, Vec<f64>>) -> Self {
        Self { dim, seed, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entries(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.entries
    }

    pub fn get(&self, token: &str) -> Result<&[f64], QueryError> {
        self.entries
            .get(token)
            .map(Vec::as_slice)
            .ok_or_else(|| QueryError::UnknownToken(token.to_string()))
    }
}

/// Concatenated triad embeddings, `M * 3 * D_w` long.
#[derive(Debug, Clone, PartialEq)]
pub struct LinguisticFeature(pub Vec<f64>);

impl LinguisticFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Embed the first `slots` triads; a short list repeats the first triad's block.
pub fn embed(triads: &[Triad], table: &EmbeddingTable, slots: usize) -> Result<LinguisticFeature, QueryError> {
    if slots == 0 {
        return Err(QueryError::ZeroSlots);
    }
    let first = triads.first().ok_or(QueryError::NoTriads)?;
    let mut out = Vec::with_capacity(slots * 3 * table.dim());
    for k in 0..slots {
        let t = triads.get(k).unwrap_or(first);
        for tok in [&t.target, &t.reference, &t.discriminative] {
            out.extend_from_slice(table.get(tok)?);
        }
    }
    Ok(LinguisticFeature(out))
}

/// Mean of the raw token embeddings, tiled to the triad feature's length.
///
/// Stand-in query encoder for the ablation without triads: every token,
/// including articles and particles, contributes equally.
pub fn bag_of_tokens(tokens: &[String], table: &EmbeddingTable, slots: usize) -> Result<LinguisticFeature, QueryError> {
    if slots == 0 {
        return Err(QueryError::ZeroSlots);
    }
    if tokens.is_empty() {
        return Err(QueryError::NoTriads);
    }
    let mut mean = vec![0.0; table.dim()];
    for t in tokens {
        for (m, v) in mean.iter_mut().zip(table.get(t)?) {
            *m += v;
        }
    }
    let n = tokens.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(LinguisticFeature(mean.repeat(slots * 3)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicon {
        Lexicon::default()
    }

    fn p(text: &str) -> Vec<Triad> {
        parse_text(text, &lex()).unwrap()
    }

    #[test]
    fn single_row_fixtures() {
        assert_eq!(p("lady"), vec![Triad::new("lady", "lady", "SELF")]);
        assert_eq!(p("left"), vec![Triad::new("UKN", "UKN", "left")]);
        assert_eq!(p("left lady"), vec![Triad::new("lady", "lady", "left")]);
        assert_eq!(p("orange cat"), vec![Triad::new("cat", "cat", "orange")]);
        assert_eq!(p("cat above a shelf"), vec![Triad::new("cat", "shelf", "above")]);
        assert_eq!(p("lady holding a cat"), vec![Triad::new("lady", "cat", "holding")]);
    }

    #[test]
    fn long_query_textual_order() {
        let t = p("the left lady in white holding an orange cat and standing on a table");
        assert_eq!(
            t,
            vec![
                Triad::new("lady", "lady", "left"),
                Triad::new("lady", "lady", "white"),
                Triad::new("lady", "cat", "holding"),
                Triad::new("cat", "cat", "orange"),
                Triad::new("lady", "table", "on"),
            ]
        );
    }

    #[test]
    fn relation_particles_and_conjunctions() {
        assert_eq!(
            p("cat left of a shelf and bigger than the dog"),
            vec![Triad::new("cat", "shelf", "left"), Triad::new("cat", "dog", "bigger")]
        );
        assert_eq!(
            p("the cat in red and in big"),
            vec![Triad::new("cat", "cat", "red"), Triad::new("cat", "cat", "big")]
        );
    }

    #[test]
    fn parse_errors_carry_position() {
        let e = parse_text("cat above", &lex()).unwrap_err();
        assert!(matches!(e, QueryError::Parse { position: 2, found: None, .. }));
        let e = parse_text("red red", &lex()).unwrap_err();
        assert!(matches!(e, QueryError::Parse { position: 2, .. }));
        let e = parse_text("cat zebra", &lex()).unwrap_err();
        assert!(matches!(e, QueryError::Parse { position: 1, ref found, .. } if found.as_deref() == Some("zebra")));
        let e = parse_text("cat and", &lex()).unwrap_err();
        assert!(matches!(e, QueryError::Parse { position: 2, .. }));
        assert!(parse(&[], &lex()).is_err());
    }

    fn table() -> EmbeddingTable {
        EmbeddingTable::seeded(lex().all_tokens(), 32, 11)
    }

    #[test]
    fn embed_pads_with_first_block() {
        let t = table();
        let f = embed(&p("cat above a shelf"), &t, 2).unwrap();
        assert_eq!(f.len(), 192);
        assert_eq!(f.0[..96], f.0[96..]);
        assert_eq!(&f.0[..32], t.get("cat").unwrap());
        assert_eq!(&f.0[32..64], t.get("shelf").unwrap());
        assert_eq!(&f.0[64..96], t.get("above").unwrap());
    }

    #[test]
    fn embed_two_and_truncate_five() {
        let t = table();
        let two = p("red cat above a shelf");
        let f = embed(&two, &t, 2).unwrap();
        let b1 = embed(&two[..1], &t, 1).unwrap();
        let b2 = embed(&two[1..], &t, 1).unwrap();
        assert_eq!(f.0, [b1.0.clone(), b2.0].concat());

        let five = p("the left lady in white holding an orange cat and standing on a table");
        assert_eq!(five.len(), 5);
        let f = embed(&five, &t, 2).unwrap();
        let expect = embed(&five[..2], &t, 2).unwrap();
        assert_eq!(f, expect);
        assert_eq!(&f.0[96 + 64..192], t.get("white").unwrap());
    }

    #[test]
    fn embed_errors() {
        let t = EmbeddingTable::seeded(["cat"], 4, 1);
        assert_eq!(embed(&[], &t, 2), Err(QueryError::NoTriads));
        assert_eq!(embed(&p("cat"), &t, 0), Err(QueryError::ZeroSlots));
        assert_eq!(embed(&p("cat"), &t, 1), Err(QueryError::UnknownToken("SELF".into())));
    }

    #[test]
    fn table_deterministic_and_total() {
        let a = table();
        assert_eq!(a, table());
        for tok in lex().all_tokens() {
            assert_eq!(a.get(&tok).unwrap().len(), 32);
        }
        assert_ne!(a, EmbeddingTable::seeded(lex().all_tokens(), 32, 12));
    }

    #[test]
    fn bag_of_tokens_is_tiled_mean() {
        let t = table();
        let toks = tokenize("the red cat");
        let f = bag_of_tokens(&toks, &t, 2).unwrap();
        assert_eq!(f.len(), 192);
        let want: Vec<f64> = (0..32)
            .map(|i| (t.get("the").unwrap()[i] + t.get("red").unwrap()[i] + t.get("cat").unwrap()[i]) / 3.0)
            .collect();
        assert_eq!(&f.0[..32], want.as_slice());
        assert_eq!(&f.0[160..], want.as_slice());
    }
}
