//! Interpolated Kneser-Ney with absolute discounting.
//!
//! The highest order of a query uses raw counts; every lower order uses
//! continuation counts `N1+(• g)`. Queries whose history begins with `<s>`
//! therefore score their top order on raw counts, since nothing can precede
//! a sentence start. The unigram level interpolates with a uniform
//! distribution over every predictable symbol (everything except `<s>`).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub const BOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;

/// Placeholder token standing in for an abstracted mention of `type_name`.
pub fn slot_symbol(type_name: &str) -> String {
    format!("⟨{type_name}⟩")
}

pub fn is_slot_symbol(token: &str) -> bool {
    token.len() > "⟨⟩".len() && token.starts_with('⟨') && token.ends_with('⟩')
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnConfig {
    pub order: usize,
    /// One discount per order, all in (0, 1). A single value is broadcast.
    pub discounts: Vec<f64>,
    /// Word types seen fewer times than this are trained as `<unk>`.
    pub unk_min_count: u64,
}

impl Default for KnConfig {
    fn default() -> Self {
        KnConfig {
            order: 5,
            discounts: vec![0.75],
            unk_min_count: 2,
        }
    }
}

impl KnConfig {
    pub fn with_order(order: usize) -> Self {
        KnConfig {
            order,
            ..Default::default()
        }
    }

    fn resolved_discounts(&self) -> Result<Vec<f64>> {
        if self.order < 2 {
            return Err(Error::Config(format!(
                "n-gram order must be at least 2, got {}",
                self.order
            )));
        }
        let d = match self.discounts.as_slice() {
            [d] => vec![*d; self.order],
            ds if ds.len() == self.order => ds.to_vec(),
            ds => {
                return Err(Error::Config(format!(
                    "{} discounts given for order {}",
                    ds.len(),
                    self.order
                )))
            }
        };
        if let Some(bad) = d.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
            return Err(Error::Config(format!("discount {bad} outside (0, 1)")));
        }
        Ok(d)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub(crate) struct NgramCount {
    pub raw: u64,
    /// Distinct left extensions. Always zero at the highest order.
    pub cont: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct ContextStats {
    raw_sum: u64,
    raw_types: u64,
    cont_sum: u64,
    cont_types: u64,
}

#[derive(Clone, Debug)]
pub struct KnModel {
    order: usize,
    discounts: Vec<f64>,
    words: Vec<String>,
    index: HashMap<String, u32>,
    /// `ngrams[k - 1]` holds the k-grams.
    ngrams: Vec<HashMap<Vec<u32>, NgramCount>>,
    /// `contexts[k - 1]` is keyed by the (k-1)-gram history of a k-gram.
    contexts: Vec<HashMap<Vec<u32>, ContextStats>>,
}

fn strip_boundaries(sentence: &[String]) -> &[String] {
    let mut s = sentence;
    if s.first().is_some_and(|t| t == BOS) {
        s = &s[1..];
    }
    if s.last().is_some_and(|t| t == EOS) {
        s = &s[..s.len() - 1];
    }
    s
}

/// Trains a model on sentences of tokens. Boundary markers are optional in
/// the input and added where missing.
pub fn train_kn(stream: &[Vec<String>], config: &KnConfig) -> Result<KnModel> {
    let discounts = config.resolved_discounts()?;
    if stream.is_empty() {
        return Err(Error::Config("empty training stream".into()));
    }

    let mut freq: HashMap<&str, u64> = HashMap::new();
    let mut first_seen: Vec<&str> = Vec::new();
    for sentence in stream {
        for tok in strip_boundaries(sentence) {
            let c = freq.entry(tok.as_str()).or_insert(0);
            if *c == 0 {
                first_seen.push(tok);
            }
            *c += 1;
        }
    }

    let mut words: Vec<String> = vec![BOS.into(), EOS.into(), UNK.into()];
    for tok in &first_seen {
        let reserved = *tok == BOS || *tok == EOS || *tok == UNK;
        if !reserved && (is_slot_symbol(tok) || freq[tok] >= config.unk_min_count) {
            words.push(tok.to_string());
        }
    }
    let index: HashMap<String, u32> = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i as u32))
        .collect();

    let order = config.order;
    let mut ngrams: Vec<HashMap<Vec<u32>, NgramCount>> = vec![HashMap::new(); order];
    let mut ids = Vec::new();
    for sentence in stream {
        ids.clear();
        ids.push(BOS_ID);
        ids.extend(
            strip_boundaries(sentence)
                .iter()
                .map(|t| index.get(t.as_str()).copied().unwrap_or(UNK_ID)),
        );
        ids.push(EOS_ID);
        for p in 1..ids.len() {
            for k in 1..=order.min(p + 1) {
                ngrams[k - 1]
                    .entry(ids[p + 1 - k..=p].to_vec())
                    .or_default()
                    .raw += 1;
            }
        }
    }

    for k in 2..=order {
        let (lower, upper) = ngrams.split_at_mut(k - 1);
        for gram in upper[0].keys() {
            lower[k - 2]
                .get_mut(&gram[1..])
                .expect("suffix of a counted n-gram is counted")
                .cont += 1;
        }
    }

    let contexts = build_contexts(&ngrams);
    Ok(KnModel {
        order,
        discounts,
        words,
        index,
        ngrams,
        contexts,
    })
}

fn build_contexts(
    ngrams: &[HashMap<Vec<u32>, NgramCount>],
) -> Vec<HashMap<Vec<u32>, ContextStats>> {
    ngrams
        .iter()
        .map(|table| {
            let mut ctx: HashMap<Vec<u32>, ContextStats> = HashMap::new();
            for (gram, count) in table {
                let stats = ctx.entry(gram[..gram.len() - 1].to_vec()).or_default();
                stats.raw_sum += count.raw;
                stats.raw_types += 1;
                if count.cont > 0 {
                    stats.cont_sum += count.cont;
                    stats.cont_types += 1;
                }
            }
            ctx
        })
        .collect()
}

impl KnModel {
    pub(crate) fn from_parts(
        order: usize,
        discounts: Vec<f64>,
        words: Vec<String>,
        ngrams: Vec<HashMap<Vec<u32>, NgramCount>>,
    ) -> Result<KnModel> {
        if order < 2 || discounts.len() != order || ngrams.len() != order {
            return Err(Error::Format("inconsistent order".into()));
        }
        if words.len() < 3 || words[0] != BOS || words[1] != EOS || words[2] != UNK {
            return Err(Error::Format("reserved symbols missing".into()));
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let contexts = build_contexts(&ngrams);
        Ok(KnModel {
            order,
            discounts,
            words,
            index,
            ngrams,
            contexts,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discounts(&self) -> &[f64] {
        &self.discounts
    }

    pub fn vocab(&self) -> &[String] {
        &self.words
    }

    pub fn vocab_len(&self) -> usize {
        self.words.len()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    /// Vocabulary id with `<unk>` fallback.
    pub fn lookup(&self, word: &str) -> u32 {
        self.id(word).unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub(crate) fn ngram_tables(&self) -> &[HashMap<Vec<u32>, NgramCount>] {
        &self.ngrams
    }

    /// Raw occurrence count of an n-gram of ids.
    pub fn count(&self, gram: &[u32]) -> u64 {
        if gram.is_empty() || gram.len() > self.order {
            return 0;
        }
        self.ngrams[gram.len() - 1].get(gram).map_or(0, |c| c.raw)
    }

    /// Every id a model can assign mass to (all but `<s>`).
    pub fn predictable_ids(&self) -> impl Iterator<Item = u32> {
        1..self.words.len() as u32
    }

    /// `P(word | history)`; the history is truncated to `order - 1` ids.
    pub fn prob(&self, word: u32, history: &[u32]) -> f64 {
        if word == BOS_ID {
            return 0.0;
        }
        let h = &history[history.len().saturating_sub(self.order - 1)..];
        let top = h.len() + 1;

        let uniform = 1.0 / (self.words.len() - 1) as f64;
        let mut p = self.level(1, &[], word, top == 1, uniform);

        let mut key: Vec<u32> = Vec::with_capacity(self.order);
        for k in 2..=top {
            key.clear();
            key.extend_from_slice(&h[h.len() - (k - 1)..]);
            key.push(word);
            p = self.level(k, &key, word, k == top, p);
        }
        p
    }

    /// One interpolation step at order `k`. `gram` is the full k-gram
    /// (history followed by the predicted word) or empty at unigram level.
    fn level(&self, k: usize, gram: &[u32], word: u32, raw: bool, lower: f64) -> f64 {
        let ctx_key = if k == 1 { &[][..] } else { &gram[..k - 1] };
        let Some(stats) = self.contexts[k - 1].get(ctx_key) else {
            return lower;
        };
        let (sum, types) = if raw {
            (stats.raw_sum, stats.raw_types)
        } else {
            (stats.cont_sum, stats.cont_types)
        };
        if sum == 0 {
            return lower;
        }
        let count = if k == 1 {
            self.ngrams[0].get(&[word][..])
        } else {
            self.ngrams[k - 1].get(gram)
        }
        .map_or(0, |c| if raw { c.raw } else { c.cont });
        let d = self.discounts[k - 1];
        let sum = sum as f64;
        (count as f64 - d).max(0.0) / sum + d * types as f64 / sum * lower
    }

    /// String convenience over [`KnModel::prob`].
    pub fn prob_words(&self, word: &str, history: &[&str]) -> f64 {
        let hist: Vec<u32> = history.iter().map(|w| self.lookup(w)).collect();
        self.prob(self.lookup(word), &hist)
    }
}
