//! Diagnostic set construction and bias-probing dataset transforms.
//!
//! Candidates come from an upstream harvest (one JSON object per line) and
//! already carry the weak tagger's label and confidence. A candidate enters
//! the NRB set when the weak tagger is confidently wrong while the
//! context-only tagger is confidently right; it enters the WTS control set
//! when both agree with the gold type and the context tagger is unsure.

use std::collections::{HashMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{eligible_mentions, Dataset, Label, Mention, Sentence, Token, TypeId, TypeSet};
use crate::error::{Error, Result};
use crate::lm::{tag_slot, KnModel, TypeDistribution};

/// A query-term occurrence proposed for the diagnostic sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub tokens: Vec<String>,
    /// Inclusive token span of the query term.
    pub span: (usize, usize),
    pub gold_type: String,
    /// Weak tagger output: a type name or `"O"`.
    pub weak_label: String,
    pub weak_conf: f64,
}

impl Candidate {
    pub fn validate(&self, typeset: &TypeSet) -> Result<()> {
        let (i, j) = self.span;
        if i > j || j >= self.tokens.len() {
            return Err(Error::Config(format!(
                "span ({i},{j}) out of bounds for {} tokens",
                self.tokens.len()
            )));
        }
        if typeset.index_of(&self.gold_type).is_none() {
            return Err(Error::UnknownType(self.gold_type.clone()));
        }
        if !(0.0..=1.0).contains(&self.weak_conf) {
            return Err(Error::Config(format!(
                "confidence {} outside [0, 1]",
                self.weak_conf
            )));
        }
        Ok(())
    }

    fn is_single_capitalized(&self) -> bool {
        self.span.0 == self.span.1
            && self.tokens[self.span.0]
                .chars()
                .next()
                .is_some_and(char::is_uppercase)
    }

    /// The candidate as a one-mention sentence.
    pub fn to_sentence(&self, typeset: &TypeSet) -> Result<Sentence> {
        let t = typeset
            .index_of(&self.gold_type)
            .ok_or_else(|| Error::UnknownType(self.gold_type.clone()))?;
        let tokens = self
            .tokens
            .iter()
            .map(Token::new)
            .collect::<Result<Vec<_>>>()?;
        let mut labels = vec![Label::O; tokens.len()];
        labels[self.span.0] = Label::B(t);
        for l in &mut labels[self.span.0 + 1..=self.span.1] {
            *l = Label::I(t);
        }
        Sentence::new(tokens, labels, self.id.clone())
    }
}

/// Parses line-delimited JSON candidates; blank lines are skipped.
pub fn read_candidates(text: &str) -> Result<Vec<Candidate>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_candidates(candidates: &[Candidate]) -> Result<String> {
    let mut out = String::new();
    for c in candidates {
        out.push_str(&serde_json::to_string(c)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn candidates_to_dataset(candidates: &[Candidate], typeset: &TypeSet) -> Result<Dataset> {
    let sentences = candidates
        .iter()
        .map(|c| c.to_sentence(typeset))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(sentences, typeset.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionThresholds {
    /// Weak-tagger confidence must exceed this.
    pub weak_conf_min: f64,
    /// NRB needs a context top-1/top-2 gap of at least this.
    pub nrb_gap_min: f64,
    /// WTS needs a gap strictly below this.
    pub wts_gap_max: f64,
}

impl Default for SelectionThresholds {
    fn default() -> Self {
        SelectionThresholds {
            weak_conf_min: 0.85,
            nrb_gap_min: 0.25,
            wts_gap_max: 0.1,
        }
    }
}

impl SelectionThresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [self.weak_conf_min, self.nrb_gap_min, self.wts_gap_max];
        if all.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("thresholds must lie in [0, 1]".into()));
        }
        if self.wts_gap_max >= self.nrb_gap_min {
            return Err(Error::Config(
                "WTS gap ceiling must be below the NRB gap floor".into(),
            ));
        }
        Ok(())
    }

    /// Parses `"conf,nrb_gap,wts_gap"`.
    pub fn parse(s: &str) -> Result<Self> {
        let vals = s
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("bad thresholds {s:?}: {e}")))?;
        let [weak_conf_min, nrb_gap_min, wts_gap_max] = vals[..] else {
            return Err(Error::Config(format!("expected 3 thresholds, got {s:?}")));
        };
        let t = SelectionThresholds {
            weak_conf_min,
            nrb_gap_min,
            wts_gap_max,
        };
        t.validate()?;
        Ok(t)
    }
}

/// Anything that can type a span from its context alone.
pub trait ContextTagger {
    /// Fails when the tagger cannot serve `typeset` at all.
    fn check(&self, _typeset: &TypeSet) -> Result<()> {
        Ok(())
    }

    fn distribution(
        &self,
        tokens: &[String],
        span: (usize, usize),
        typeset: &TypeSet,
    ) -> Result<TypeDistribution>;
}

impl ContextTagger for KnModel {
    fn check(&self, typeset: &TypeSet) -> Result<()> {
        for name in typeset.names() {
            if self.id(&crate::lm::slot_symbol(name)).is_none() {
                return Err(Error::Tagger(format!(
                    "language model never saw the {name} slot; train it on abstracted text"
                )));
            }
        }
        Ok(())
    }

    fn distribution(
        &self,
        tokens: &[String],
        span: (usize, usize),
        typeset: &TypeSet,
    ) -> Result<TypeDistribution> {
        tag_slot(self, tokens, span, typeset)
    }
}

/// Weak tagger confidently wrong, context tagger confidently right.
pub fn is_nrb(c: &Candidate, context: &TypeDistribution, th: &SelectionThresholds) -> bool {
    c.weak_label != c.gold_type
        && c.weak_conf > th.weak_conf_min
        && context.top_type() == c.gold_type
        && context.gap() >= th.nrb_gap_min
}

/// Both taggers right, context tagger nearly undecided.
pub fn is_wts(c: &Candidate, context: &TypeDistribution, th: &SelectionThresholds) -> bool {
    c.weak_label == c.gold_type
        && c.weak_conf > th.weak_conf_min
        && context.top_type() == c.gold_type
        && context.gap() < th.wts_gap_max
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionOptions {
    /// Restrict to single-token, capitalised query terms.
    pub single_token_only: bool,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        SelectionOptions {
            single_token_only: true,
        }
    }
}

fn select<T, F>(
    candidates: &[Candidate],
    tagger: &T,
    typeset: &TypeSet,
    th: &SelectionThresholds,
    opts: SelectionOptions,
    keep: F,
) -> Result<Vec<Candidate>>
where
    T: ContextTagger + ?Sized,
    F: Fn(&Candidate, &TypeDistribution, &SelectionThresholds) -> bool,
{
    th.validate()?;
    tagger.check(typeset)?;
    let mut out = Vec::new();
    for c in candidates {
        c.validate(typeset)?;
        if opts.single_token_only && !c.is_single_capitalized() {
            continue;
        }
        let dist = tagger.distribution(&c.tokens, c.span, typeset)?;
        if keep(c, &dist, th) {
            out.push(c.clone());
        }
    }
    Ok(out)
}

pub fn select_nrb<T: ContextTagger + ?Sized>(
    candidates: &[Candidate],
    tagger: &T,
    typeset: &TypeSet,
    th: &SelectionThresholds,
    opts: SelectionOptions,
) -> Result<Vec<Candidate>> {
    select(candidates, tagger, typeset, th, opts, is_nrb)
}

pub fn select_wts<T: ContextTagger + ?Sized>(
    candidates: &[Candidate],
    tagger: &T,
    typeset: &TypeSet,
    th: &SelectionThresholds,
    opts: SelectionOptions,
) -> Result<Vec<Candidate>> {
    select(candidates, tagger, typeset, th, opts, is_wts)
}

/// Shuffles mention surfaces across the whole dataset while every slot keeps
/// its type. Slots are resized to the length of the surface they receive.
pub fn permute_mentions<R: Rng + ?Sized>(dataset: &Dataset, rng: &mut R) -> Dataset {
    let mentions: Vec<Vec<Mention>> = dataset.sentences().iter().map(Sentence::mentions).collect();
    let surfaces: Vec<Vec<Token>> = dataset
        .sentences()
        .iter()
        .zip(&mentions)
        .flat_map(|(s, ms)| ms.iter().map(|m| s.tokens()[m.start..=m.end].to_vec()))
        .collect();
    if surfaces.len() < 2 {
        log::warn!(
            "permute_mentions: {} mention(s), nothing to permute",
            surfaces.len()
        );
        return dataset.clone();
    }
    let mut perm: Vec<usize> = (0..surfaces.len()).collect();
    perm.shuffle(rng);

    let mut next = perm.into_iter();
    let sentences = dataset
        .sentences()
        .iter()
        .zip(&mentions)
        .map(|(s, ms)| {
            let mut tokens = Vec::with_capacity(s.len());
            let mut labels = Vec::with_capacity(s.len());
            let mut i = 0;
            for m in ms {
                tokens.extend_from_slice(&s.tokens()[i..m.start]);
                labels.extend_from_slice(&s.labels()[i..m.start]);
                let incoming = &surfaces[next.next().expect("one surface per slot")];
                for (k, tok) in incoming.iter().enumerate() {
                    tokens.push(tok.clone());
                    labels.push(if k == 0 {
                        Label::B(m.type_id)
                    } else {
                        Label::I(m.type_id)
                    });
                }
                i = m.end + 1;
            }
            tokens.extend_from_slice(&s.tokens()[i..]);
            labels.extend_from_slice(&s.labels()[i..]);
            Sentence::new(tokens, labels, s.doc_id().map(str::to_string))
                .expect("slot rewrite keeps IOB2 valid")
                .with_synthetic(s.is_synthetic())
        })
        .collect();
    Dataset::new(sentences, dataset.typeset().clone()).expect("types unchanged")
}

/// Uniformly samples `k` sentences, without replacement, among those having
/// at least one mention with three context words on a side.
pub fn lowres_sample<R: Rng + ?Sized>(dataset: &Dataset, k: usize, rng: &mut R) -> Result<Dataset> {
    let eligible: Vec<&Sentence> = dataset
        .sentences()
        .iter()
        .filter(|s| !eligible_mentions(s).is_empty())
        .collect();
    if k > eligible.len() {
        return Err(Error::Config(format!(
            "asked for {k} sentences but only {} have an eligible mention",
            eligible.len()
        )));
    }
    let picked = index::sample(rng, eligible.len(), k)
        .into_iter()
        .map(|i| eligible[i].clone())
        .collect();
    Dataset::new(picked, dataset.typeset().clone())
}

/// Parameters of the synthetic name-regularity benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub types: Vec<String>,
    pub names_per_type: usize,
    pub templates_per_type: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub challenge_size: usize,
    /// Fraction of training sentences that pair a name with another type's
    /// template (gold follows the template).
    pub leak_rate: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            types: vec!["PER".into(), "LOC".into(), "ORG".into()],
            names_per_type: 30,
            templates_per_type: 40,
            train_size: 2000,
            test_size: 600,
            challenge_size: 600,
            leak_rate: 0.0,
        }
    }
}

/// A context template: words around a single entity slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub type_id: TypeId,
    pub before: Vec<String>,
    pub after: Vec<String>,
}

impl Template {
    pub fn fill(&self, name: &str) -> Result<Sentence> {
        let n = self.before.len() + 1 + self.after.len();
        let mut tokens = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for w in &self.before {
            tokens.push(Token::new(w.as_str())?);
            labels.push(Label::O);
        }
        tokens.push(Token::new(name)?);
        labels.push(Label::B(self.type_id));
        for w in &self.after {
            tokens.push(Token::new(w.as_str())?);
            labels.push(Label::O);
        }
        Sentence::new(tokens, labels, None)
    }
}

/// Name and template pools, one per type, all pairwise disjoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPools {
    pub names: Vec<Vec<String>>,
    pub templates: Vec<Vec<Template>>,
}

impl SyntheticPools {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for name in self.names.iter().flatten() {
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!(
                    "name {name} is in more than one pool"
                )));
            }
        }
        let mut owner: HashMap<&str, TypeId> = HashMap::new();
        for (t, pool) in self.templates.iter().enumerate() {
            for tpl in pool {
                for w in tpl.before.iter().chain(&tpl.after) {
                    if FILLER.contains(&w.as_str()) {
                        continue;
                    }
                    if seen.contains(w.as_str()) || *owner.entry(w).or_insert(t) != t {
                        return Err(Error::Config(format!(
                            "context word {w} is shared across pools"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBias {
    pub pools: SyntheticPools,
    pub train: Dataset,
    pub test: Dataset,
    pub challenge: Dataset,
}

/// Type-neutral words shared by all templates.
const FILLER: &[&str] = &[
    "the", "a", "of", "in", "and", "to", "was", "with", "for", "on", ".",
];

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr",
    "st", "gr", "pl", "sh",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn pseudo_word<R: Rng + ?Sized>(rng: &mut R, syllables: usize) -> String {
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}",
                ONSETS[rng.random_range(0..ONSETS.len())],
                VOWELS[rng.random_range(0..VOWELS.len())]
            )
        })
        .collect()
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

fn fresh_word<R: Rng + ?Sized>(
    rng: &mut R,
    used: &mut HashSet<String>,
    syllables: usize,
) -> String {
    loop {
        let w = pseudo_word(rng, syllables);
        if !FILLER.contains(&w.as_str()) && used.insert(w.clone()) {
            return w;
        }
    }
}

/// Context words per template owned by its type.
const CUES_PER_TEMPLATE: usize = 2;

fn build_pools<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> SyntheticPools {
    let k = spec.types.len();
    let mut used = HashSet::new();
    let names = (0..k)
        .map(|_| {
            (0..spec.names_per_type)
                .map(|_| capitalize(&fresh_word(rng, &mut used, 3)))
                .collect()
        })
        .collect();
    let templates = (0..k)
        .map(|t| {
            (0..spec.templates_per_type)
                .map(|_| {
                    let cues: Vec<String> = (0..CUES_PER_TEMPLATE)
                        .map(|_| fresh_word(rng, &mut used, 2))
                        .collect();
                    random_template(t, cues, rng)
                })
                .collect()
        })
        .collect();
    SyntheticPools { names, templates }
}

/// Lays out a template with the slot at the start, middle or end. The side
/// holding the cues has at least three context words, and every cue sits
/// within three tokens of the slot.
fn random_template<R: Rng + ?Sized>(type_id: TypeId, cues: Vec<String>, rng: &mut R) -> Template {
    let filler = |rng: &mut R| FILLER[rng.random_range(0..FILLER.len() - 1)].to_string();
    // Cues plus one filler, shuffled, right next to the slot.
    let mut near: Vec<String> = cues;
    near.push(filler(rng));
    near.shuffle(rng);
    let mut far: Vec<String> = (0..rng.random_range(1..=3)).map(|_| filler(rng)).collect();
    far.push(".".to_string());

    match rng.random_range(0..3) {
        0 => Template {
            type_id,
            before: Vec::new(),
            after: near.into_iter().chain(far).collect(),
        },
        1 => {
            near.reverse();
            let lead: Vec<String> = (0..rng.random_range(0..=1)).map(|_| filler(rng)).collect();
            Template {
                type_id,
                before: lead.into_iter().chain(near).collect(),
                after: far,
            }
        }
        _ => Template {
            type_id,
            before: far[..far.len() - 1].iter().cloned().chain(near).collect(),
            after: vec![".".to_string()],
        },
    }
}

/// Generates train/test/challenge splits where names are perfectly
/// predictive of their type in training and testing, while the challenge
/// split places every name in another type's context, labelled by the
/// context.
pub fn gen_synthetic_bias<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Result<SyntheticBias> {
    let typeset = TypeSet::new(spec.types.clone())?;
    if spec.names_per_type == 0
        || spec.templates_per_type == 0
        || spec.train_size == 0
        || spec.test_size == 0
        || spec.challenge_size == 0
    {
        return Err(Error::Config(
            "synthetic pool and split sizes must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.leak_rate) {
        return Err(Error::Config(format!(
            "leak rate {} outside [0, 1]",
            spec.leak_rate
        )));
    }
    let pools = build_pools(spec, rng);
    pools.validate()?;
    let k = typeset.len();

    let other_type = |t: TypeId, rng: &mut R| {
        let d = rng.random_range(0..k - 1);
        if d < t {
            d
        } else {
            d + 1
        }
    };
    let pick = |pool_len: usize, rng: &mut R| rng.random_range(0..pool_len);

    let make = |n: usize, cross: &dyn Fn(&mut R) -> bool, rng: &mut R| -> Result<Dataset> {
        let mut sentences = Vec::with_capacity(n);
        for _ in 0..n {
            let name_type = rng.random_range(0..k);
            let ctx_type = if cross(rng) {
                other_type(name_type, rng)
            } else {
                name_type
            };
            let name = &pools.names[name_type][pick(spec.names_per_type, rng)];
            let tpl = &pools.templates[ctx_type][pick(spec.templates_per_type, rng)];
            sentences.push(tpl.fill(name)?);
        }
        Dataset::new(sentences, typeset.clone())
    };

    let leak = spec.leak_rate;
    let train = make(
        spec.train_size,
        &|rng: &mut R| leak > 0.0 && rng.random::<f64>() < leak,
        rng,
    )?;
    let test = make(spec.test_size, &|_: &mut R| false, rng)?;
    let challenge = make(spec.challenge_size, &|_: &mut R| true, rng)?;
    Ok(SyntheticBias {
        pools,
        train,
        test,
        challenge,
    })
}
