//! Windowed feed-forward sequence tagger with a true head and a noisy head.
//!
//! Each token's input representation is its word embedding plus a case
//! embedding, plus a noise embedding when the token belongs to a flipped
//! mention. The `2r + 1` representations around a token are concatenated,
//! passed through one `tanh` layer, and projected by two heads: `W` for the
//! gold labels and `W′` for the noisy ones.

mod checkpoint;
mod model;
mod train;

pub use model::{
    apply_noisy_update, apply_true_update, batch_losses, decode, forward, forward_batch, gradients,
    init_params, predict_labels, Encoded, Example, ForwardCache, NoisyGrads, NoisyTargets,
    TaggerParams, TrueGrads,
};
pub use train::{train, EpochLog, StepLosses, Tagger};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::robust::MASK_TOKEN;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const MASK_ID: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaggerConfig {
    pub embed_dim: usize,
    /// Context radius; the encoder sees `2r + 1` tokens.
    pub window: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Scale of the uniform weight initialisation.
    pub init_scale: f64,
    pub freeze_embeddings: bool,
    /// Probability of flipping an eligible mention under `use_adv`.
    pub lambda: f64,
    pub use_adv: bool,
    pub use_mask: bool,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            embed_dim: 64,
            window: 3,
            hidden: 128,
            learning_rate: 0.1,
            lr_decay: 0.9,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            init_scale: 0.1,
            freeze_embeddings: false,
            lambda: 0.8,
            use_adv: false,
            use_mask: false,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("window", self.window),
            ("hidden", self.hidden),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init_scale must be non-negative".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }

    pub fn window_len(&self) -> usize {
        2 * self.window + 1
    }
}

/// Word vocabulary of the tagger. Ids 0..3 are `<pad>`, `<unk>`, `[MASK]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in [PAD, UNK, MASK_TOKEN] {
            v.insert(w.to_string());
        }
        for w in words {
            v.insert(w.into());
        }
        v
    }

    /// Every surface of `dataset`, in order of first appearance.
    pub fn build(dataset: &Dataset) -> Self {
        Vocab::from_words(
            dataset
                .sentences()
                .iter()
                .flat_map(|s| s.surfaces().map(str::to_string)),
        )
    }

    fn insert(&mut self, w: String) {
        if !self.index.contains_key(&w) {
            self.index.insert(w.clone(), self.words.len());
            self.words.push(w);
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }
}
