//! N-gram language model over entity-abstracted text, used as a
//! context-only entity typer.
//!
//! Mentions are replaced by one slot symbol per type (`⟨LOC⟩`, ...). To type
//! a span, the span is swapped for each slot symbol in turn and the
//! resulting sentences are ranked by perplexity.

mod io;
mod kn;

pub use kn::{
    is_slot_symbol, slot_symbol, train_kn, KnConfig, KnModel, BOS, BOS_ID, EOS, EOS_ID, UNK, UNK_ID,
};

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Label, TypeSet};
use crate::error::{Error, Result};

/// Replaces every mention by its type's slot symbol and brackets each
/// sentence with `<s>` / `</s>`.
pub fn abstract_entities(dataset: &Dataset) -> Vec<Vec<String>> {
    let typeset = dataset.typeset();
    dataset
        .sentences()
        .iter()
        .map(|s| {
            let mut out = Vec::with_capacity(s.len() + 2);
            out.push(BOS.to_string());
            for (tok, label) in s.tokens().iter().zip(s.labels()) {
                match *label {
                    Label::O => out.push(tok.surface().to_string()),
                    Label::B(t) => out.push(slot_symbol(typeset.name(t))),
                    Label::I(_) => {}
                }
            }
            out.push(EOS.to_string());
            out
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SequenceScore {
    /// Natural-log probability of the tokens followed by `</s>`.
    pub log_prob: f64,
    /// Number of scored positions (tokens plus `</s>`).
    pub positions: usize,
    pub perplexity: f64,
}

/// Scores one sentence (without boundary markers) under `model`.
pub fn sequence_score<S: AsRef<str>>(model: &KnModel, tokens: &[S]) -> SequenceScore {
    let mut ids = Vec::with_capacity(tokens.len() + 2);
    ids.push(BOS_ID);
    ids.extend(tokens.iter().map(|t| model.lookup(t.as_ref())));
    ids.push(EOS_ID);
    let log_prob: f64 = (1..ids.len())
        .map(|p| model.prob(ids[p], &ids[..p]).ln())
        .sum();
    let positions = ids.len() - 1;
    SequenceScore {
        log_prob,
        positions,
        perplexity: (-log_prob / positions as f64).exp(),
    }
}

/// Perplexity over several sentences, pooling log-probabilities and scored
/// positions.
pub fn corpus_perplexity<S: AsRef<str>>(model: &KnModel, sentences: &[Vec<S>]) -> f64 {
    let (lp, n) = sentences
        .iter()
        .map(|s| sequence_score(model, s))
        .fold((0.0, 0usize), |(lp, n), s| {
            (lp + s.log_prob, n + s.positions)
        });
    (-lp / n as f64).exp()
}

/// Distribution over entity types for one slot, in type-set order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeDistribution {
    pub types: Vec<String>,
    pub probs: Vec<f64>,
}

impl TypeDistribution {
    pub fn new(types: Vec<String>, probs: Vec<f64>) -> Self {
        TypeDistribution { types, probs }
    }

    /// Index of the most probable type; ties go to the earlier type.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn top_type(&self) -> &str {
        &self.types[self.argmax()]
    }

    /// Top-1 minus top-2 probability.
    pub fn gap(&self) -> f64 {
        let mut sorted = self.probs.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        match sorted.as_slice() {
            [a, b, ..] => a - b,
            [a] => *a,
            [] => 0.0,
        }
    }

    pub fn prob(&self, type_name: &str) -> Option<f64> {
        self.types
            .iter()
            .position(|t| t == type_name)
            .map(|i| self.probs[i])
    }
}

/// Types the span `start..=end` of `tokens` from its context alone.
///
/// Each type's slot symbol is substituted for the span and the resulting
/// sentence scored; probabilities are proportional to inverse perplexity,
/// i.e. a softmax over negative per-position cross-entropy.
pub fn tag_slot<S: AsRef<str>>(
    model: &KnModel,
    tokens: &[S],
    (start, end): (usize, usize),
    typeset: &TypeSet,
) -> Result<TypeDistribution> {
    if start > end || end >= tokens.len() {
        return Err(Error::Config(format!(
            "span ({start},{end}) out of bounds for {} tokens",
            tokens.len()
        )));
    }
    let slots: Vec<String> = typeset.names().iter().map(|n| slot_symbol(n)).collect();
    if let Some(missing) = slots.iter().find(|s| model.id(s).is_none()) {
        return Err(Error::Tagger(format!(
            "model has no {missing} symbol; was it trained on abstracted text?"
        )));
    }

    let neg_entropy: Vec<f64> = slots
        .iter()
        .map(|slot| {
            let candidate: Vec<&str> = tokens[..start]
                .iter()
                .map(AsRef::as_ref)
                .chain(std::iter::once(slot.as_str()))
                .chain(tokens[end + 1..].iter().map(AsRef::as_ref))
                .collect();
            let score = sequence_score(model, &candidate);
            score.log_prob / score.positions as f64
        })
        .collect();

    let max = neg_entropy
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = neg_entropy.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(TypeDistribution::new(
        typeset.names().to_vec(),
        weights.iter().map(|w| w / z).collect(),
    ))
}
