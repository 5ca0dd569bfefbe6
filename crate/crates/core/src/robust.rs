//! Bias-mitigation training signals: adversarial noisy labels with their
//! learnable noise embeddings, and entity-masking augmentation.
//!
//! A mention eligible for noise gets its type replaced, with probability
//! λ, by a type drawn uniformly from the other `K - 1` types. Every token of
//! a flipped mention then receives the noise embedding row for the ordered
//! pair `(gold, noisy)`; there are `K (K - 1)` such rows.

use ndarray::{Array1, Array2, ArrayView2};
use rand::distr::Open01;
use rand::Rng;

use crate::corpus::{
    eligible_mentions, labels_from_mentions, Dataset, Label, Mention, Sentence, Token, TypeId,
    TypeSet,
};
use crate::error::{Error, Result};

pub const MASK_TOKEN: &str = "[MASK]";

/// Number of ordered type switches, `K (K - 1)`.
pub fn noise_row_count(k: usize) -> usize {
    k * (k - 1)
}

/// Row of the noise matrix for switching `from` to `to`.
pub fn noise_index(from: TypeId, to: TypeId, typeset: &TypeSet) -> Result<usize> {
    let k = typeset.len();
    if from >= k || to >= k {
        return Err(Error::UnknownType(format!("type id {}", from.max(to))));
    }
    if from == to {
        return Err(Error::Config(format!(
            "no noise row for switching {} to itself",
            typeset.name(from)
        )));
    }
    let col = if to < from { to } else { to - 1 };
    Ok(from * (k - 1) + col)
}

/// The adversarial parameters θ′: noise embeddings plus the noisy head.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvParams {
    /// `K (K - 1) × d`.
    pub noise: Array2<f64>,
    /// `h × L`.
    pub w_noisy: Array2<f64>,
    pub b_noisy: Array1<f64>,
}

impl AdvParams {
    pub fn zeros(types: usize, embed_dim: usize, hidden: usize) -> Self {
        let labels = 2 * types + 1;
        AdvParams {
            noise: Array2::zeros((noise_row_count(types), embed_dim)),
            w_noisy: Array2::zeros((hidden, labels)),
            b_noisy: Array1::zeros(labels),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.noise
            .iter()
            .chain(&self.w_noisy)
            .chain(&self.b_noisy)
            .all(|v| v.is_finite())
    }
}

/// A label sequence with some mention types flipped.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisySequence {
    pub labels: Vec<Label>,
    /// Noise row per token, `None` for tokens outside flipped mentions.
    pub noise_rows: Vec<Option<usize>>,
    pub flipped: Vec<(Mention, TypeId)>,
}

impl NoisySequence {
    /// The unperturbed sequence.
    pub fn clean(sentence: &Sentence) -> Self {
        NoisySequence {
            labels: sentence.labels().to_vec(),
            noise_rows: vec![None; sentence.len()],
            flipped: Vec::new(),
        }
    }

    pub fn is_clean(&self) -> bool {
        self.flipped.is_empty()
    }
}

/// Draws a fresh noisy label sequence for `sentence`.
///
/// Each eligible mention independently draws `p ~ U(0, 1)` and is flipped
/// when `p ≤ λ`. Mentions lacking three context words are never touched.
pub fn sample_noisy_labels<R: Rng + ?Sized>(
    sentence: &Sentence,
    typeset: &TypeSet,
    lambda: f64,
    rng: &mut R,
) -> NoisySequence {
    let k = typeset.len();
    let mut out = NoisySequence::clean(sentence);
    let mut noisy_mentions = sentence.mentions();
    for mention in eligible_mentions(sentence) {
        let p: f64 = rng.sample(Open01);
        if p > lambda {
            continue;
        }
        let draw = rng.random_range(0..k - 1);
        let to = if draw < mention.type_id {
            draw
        } else {
            draw + 1
        };
        let row = noise_index(mention.type_id, to, typeset).expect("distinct in-range types");
        for r in &mut out.noise_rows[mention.start..=mention.end] {
            *r = Some(row);
        }
        if let Some(m) = noisy_mentions.iter_mut().find(|m| m.start == mention.start) {
            m.type_id = to;
        }
        out.flipped.push((mention, to));
    }
    out.labels = labels_from_mentions(sentence.len(), &noisy_mentions);
    out
}

pub(crate) fn log_softmax_at(row: ndarray::ArrayView1<f64>, target: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row[target] - lse
}

/// `Σ_i 1(y′_i ≠ y_i) CE(f′_i, y′_i)`, summed over the tokens of one
/// sentence.
pub fn loss_noisy(noisy_logits: ArrayView2<f64>, noisy: &[Label], gold: &[Label]) -> f64 {
    noisy
        .iter()
        .zip(gold)
        .enumerate()
        .filter(|(_, (yn, yg))| yn != yg)
        .map(|(i, (yn, _))| -log_softmax_at(noisy_logits.row(i), yn.index()))
        .sum()
}

/// Appends, for every eligible mention, a copy of its sentence where the
/// mention is collapsed into a single `[MASK]` token labelled `B-t`.
/// Originals are kept as-is and come first; the copies are marked synthetic.
pub fn mask_augment(dataset: &Dataset) -> Dataset {
    let mut sentences = dataset.sentences().to_vec();
    for s in dataset.sentences() {
        for m in eligible_mentions(s) {
            sentences.push(mask_mention(s, &m));
        }
    }
    Dataset::new(sentences, dataset.typeset().clone()).expect("masking keeps types in range")
}

fn mask_mention(sentence: &Sentence, mention: &Mention) -> Sentence {
    let mut tokens: Vec<Token> = sentence.tokens()[..mention.start].to_vec();
    let mut labels: Vec<Label> = sentence.labels()[..mention.start].to_vec();
    tokens.push(Token::new(MASK_TOKEN).expect("mask token is valid"));
    labels.push(Label::B(mention.type_id));
    tokens.extend_from_slice(&sentence.tokens()[mention.end + 1..]);
    labels.extend_from_slice(&sentence.labels()[mention.end + 1..]);
    Sentence::new(tokens, labels, sentence.doc_id().map(str::to_string))
        .expect("collapsing a whole mention keeps IOB2 valid")
        .with_synthetic(true)
}
