//! Fixtures and brute-force reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};

use contextbias::benchgen::{Candidate, ContextTagger};
use contextbias::corpus::{Dataset, Label, Sentence, Token, TypeSet};
use contextbias::evalkit::Prf;
use contextbias::lm::TypeDistribution;
use contextbias::robust::{sample_noisy_labels, AdvParams};
use contextbias::tagger::{batch_losses, init_params, Example, TaggerConfig, TaggerParams, Vocab};
use contextbias::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn types3() -> TypeSet {
    TypeSet::default()
}

pub fn sentence(tokens: &[&str], labels: &[&str]) -> Sentence {
    Sentence::from_strs(tokens, labels, &types3()).unwrap()
}

/// A random valid IOB2 sequence over `k` types.
pub fn random_iob2<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<Label> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let prev = out.last().copied().unwrap_or(Label::O);
        let label = match (rng.random_range(0..3), prev.type_id()) {
            (0, Some(t)) => Label::I(t),
            (1, _) => Label::B(rng.random_range(0..k)),
            _ => Label::O,
        };
        out.push(label);
    }
    out
}

/// Any sequence of labels, valid or not.
pub fn random_labels<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<Label> {
    (0..n)
        .map(|_| Label::from_index(rng.random_range(0..2 * k + 1)))
        .collect()
}

const WORDS: &[&str] = &[
    "the", "a", "of", "city", "said", "in", "was", ".", ",", "big", "new",
];
const NAMES: &[&str] = &[
    "Paris", "Obama", "Acme", "West", "Bromwich", "Kyoto", "Ana", "Volta",
];

/// A random sentence whose entity tokens are capitalised names.
pub fn random_sentence<R: Rng>(rng: &mut R, n: usize, typeset: &TypeSet) -> Sentence {
    let labels = random_iob2(rng, n, typeset.len());
    let tokens = labels
        .iter()
        .map(|l| {
            let pool = if *l == Label::O { WORDS } else { NAMES };
            Token::new(pool[rng.random_range(0..pool.len())]).unwrap()
        })
        .collect();
    Sentence::new(tokens, labels, None).unwrap()
}

pub fn random_dataset<R: Rng>(rng: &mut R, sentences: usize, typeset: &TypeSet) -> Dataset {
    let s = (0..sentences)
        .map(|_| {
            let n = rng.random_range(1..12);
            random_sentence(rng, n, typeset)
        })
        .collect();
    Dataset::new(s, typeset.clone()).unwrap()
}

/// Mentions by exhaustive span enumeration: `(i, j, t)` is a mention iff it
/// opens with `B-t`, continues with `I-t` only, and is not followed by `I-t`.
pub fn brute_spans(labels: &[Label]) -> Vec<(usize, usize, usize)> {
    let n = labels.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n {
            for t in 0..16 {
                let opens = labels[i] == Label::B(t);
                let inner = labels[i + 1..=j].iter().all(|&l| l == Label::I(t));
                let closed = j + 1 == n || labels[j + 1] != Label::I(t);
                if opens && inner && closed {
                    out.push((i, j, t));
                }
            }
        }
    }
    out
}

/// 100 mentions of which exactly 35 have three O tokens on one side.
pub fn eligibility_fixture() -> Dataset {
    let mut s = Vec::new();
    for i in 0..35 {
        let name = if i % 2 == 0 { "Gonzales" } else { "Pemba" };
        s.push(sentence(
            &[name, "is", "a", "small", "city"],
            &["B-LOC", "O", "O", "O", "O"],
        ));
    }
    for _ in 0..15 {
        s.push(sentence(
            &["Ana", "met", "Obama", "and", "Kim"],
            &["B-PER", "O", "B-PER", "O", "B-PER"],
        ));
    }
    for _ in 0..20 {
        s.push(sentence(
            &["at", "Acme", "Corp", "today"],
            &["O", "B-ORG", "I-ORG", "O"],
        ));
    }
    for _ in 0..5 {
        s.push(sentence(&["it", "rained", "."], &["O", "O", "O"]));
    }
    Dataset::new(s, types3()).unwrap()
}

/// Sentences from a sparse Markov chain, so that long n-grams repeat.
pub fn markov_corpus(rng: &mut ChaCha8Rng, sentences: usize, vocab: usize) -> Vec<Vec<String>> {
    let succ: Vec<Vec<usize>> = (0..vocab)
        .map(|_| (0..4).map(|_| rng.random_range(0..vocab)).collect())
        .collect();
    (0..sentences)
        .map(|_| {
            let n = rng.random_range(3..12);
            let mut w = rng.random_range(0..vocab);
            (0..n)
                .map(|_| {
                    let out = format!("w{w}");
                    w = if rng.random_bool(0.8) {
                        succ[w][rng.random_range(0..4)]
                    } else {
                        // Skewed draw gives a tail of rare words.
                        let u: f64 = rng.random();
                        ((u * u * u) * vocab as f64) as usize
                    };
                    out
                })
                .collect()
        })
        .collect()
}

/// Interpolated Kneser-Ney straight from the definition, by rescanning the
/// token stream for every count it needs.
pub type Follow = HashMap<String, (u64, HashSet<String>)>;

pub struct Oracle {
    pub sents: Vec<Vec<String>>,
    known: HashSet<String>,
    memo: RefCell<HashMap<Vec<String>, Follow>>,
    order: usize,
    d: f64,
    pub predictable: f64,
}

impl Oracle {
    pub fn new(corpus: &[Vec<String>], order: usize, d: f64, unk_min: u64) -> Self {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for s in corpus {
            for w in s {
                *freq.entry(w).or_default() += 1;
            }
        }
        let keep = |w: &str| freq[w] >= unk_min;
        let sents: Vec<Vec<String>> = corpus
            .iter()
            .map(|s| {
                let mut out = vec!["<s>".to_string()];
                out.extend(
                    s.iter()
                        .map(|w| if keep(w) { w.clone() } else { "<unk>".into() }),
                );
                out.push("</s>".into());
                out
            })
            .collect();
        let kept = freq.keys().filter(|w| keep(w)).count();
        // Everything but <s>: </s>, <unk> and the kept words.
        let known = sents
            .iter()
            .flatten()
            .filter(|w| *w != "<s>")
            .cloned()
            .collect();
        Oracle {
            sents,
            known,
            memo: Default::default(),
            order,
            d,
            predictable: (kept + 2) as f64,
        }
    }

    fn map(&self, w: &str) -> String {
        if self.known.contains(w) {
            w.to_string()
        } else {
            "<unk>".to_string()
        }
    }

    /// Per following word: (raw count, distinct left extensions) of `h x`.
    fn follow(&self, h: &[String]) -> Follow {
        if let Some(hit) = self.memo.borrow().get(h) {
            return hit.clone();
        }
        let mut out = Follow::new();
        for s in &self.sents {
            for p in 1..s.len() {
                if p < h.len() || s[p - h.len()..p] != *h {
                    continue;
                }
                let e = out.entry(s[p].clone()).or_default();
                e.0 += 1;
                if p > h.len() {
                    e.1.insert(s[p - h.len() - 1].clone());
                }
            }
        }
        self.memo.borrow_mut().insert(h.to_vec(), out.clone());
        out
    }

    fn level(&self, w: &str, h: &[String], raw: bool) -> f64 {
        let lower = if h.is_empty() {
            1.0 / self.predictable
        } else {
            self.level(w, &h[1..], false)
        };
        let table = self.follow(h);
        let count = |e: &(u64, HashSet<String>)| if raw { e.0 } else { e.1.len() as u64 };
        let sum: u64 = table.values().map(count).sum();
        if sum == 0 {
            return lower;
        }
        let types = table.values().filter(|e| count(e) > 0).count() as f64;
        let c = table.get(w).map_or(0, count) as f64;
        let sum = sum as f64;
        (c - self.d).max(0.0) / sum + self.d * types / sum * lower
    }

    pub fn prob(&self, w: &str, history: &[&str]) -> f64 {
        let h: Vec<String> = history
            .iter()
            .map(|x| {
                if *x == "<s>" {
                    x.to_string()
                } else {
                    self.map(x)
                }
            })
            .collect();
        let h = &h[h.len().saturating_sub(self.order - 1)..];
        self.level(&self.map(w), h, true)
    }
}

/// Context tagger answering from a lookup keyed by the candidate's tokens.
pub struct Table(pub HashMap<Vec<String>, Vec<f64>>);

impl ContextTagger for Table {
    fn distribution(
        &self,
        tokens: &[String],
        _: (usize, usize),
        ts: &TypeSet,
    ) -> Result<TypeDistribution> {
        Ok(TypeDistribution::new(
            ts.names().to_vec(),
            self.0[tokens].clone(),
        ))
    }
}

/// Candidates whose confidences and context gaps sit on, just below and
/// just above every threshold.
pub fn boundary_stream() -> (Vec<Candidate>, Table) {
    let confs = [0.5, 0.85, 0.85 + 1e-9, 0.97, 1.0];
    let gaps = [
        0.0,
        0.05,
        0.1 - 1e-9,
        0.1,
        0.1 + 1e-9,
        0.2,
        0.25 - 1e-9,
        0.25,
        0.25 + 1e-9,
        0.28,
        0.9,
    ];
    let weak = ["O", "PER", "LOC", "ORG"];
    let mut out = Vec::new();
    let mut table = HashMap::new();
    let mut id = 0;
    for &conf in &confs {
        for &gap in &gaps {
            for w in weak {
                for top in 0..3 {
                    // Probabilities with the requested top-1/top-2 gap.
                    let second = (1.0 - gap) / 2.0;
                    let mut probs = vec![second + gap, second, 0.0];
                    probs.rotate_right(top);
                    let tokens = vec![format!("Name{id}"), "is".into(), "here".into()];
                    table.insert(tokens.clone(), probs);
                    out.push(Candidate {
                        id: Some(id.to_string()),
                        tokens,
                        span: (0, 0),
                        gold_type: "PER".into(),
                        weak_label: w.into(),
                        weak_conf: conf,
                    });
                    id += 1;
                }
            }
        }
    }
    // The worked example: weak ORG at 0.97, context PER .58 / LOC .12 / ORG .30.
    let tokens = vec![
        "Bromwich".to_string(),
        "made".into(),
        "his".into(),
        "debut".into(),
    ];
    table.insert(tokens.clone(), vec![0.58, 0.12, 0.30]);
    out.push(Candidate {
        id: Some("figure".into()),
        tokens,
        span: (0, 0),
        gold_type: "PER".into(),
        weak_label: "ORG".into(),
        weak_conf: 0.97,
    });
    (out, Table(table))
}

pub fn brute_gap(p: &[f64]) -> (usize, f64) {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    (idx[0], p[idx[0]] - p[idx[1]])
}

/// Predictions for `gold`: a mix of copies, retyped and random sequences.
pub fn predictions(rng: &mut ChaCha8Rng, gold: &Dataset) -> Vec<Vec<Label>> {
    gold.sentences()
        .iter()
        .map(|s| match rng.random_range(0..4) {
            0 => s.labels().to_vec(),
            1 => s
                .labels()
                .iter()
                .map(|l| match *l {
                    Label::B(t) => Label::B((t + 1) % 3),
                    Label::I(t) => Label::I((t + 1) % 3),
                    Label::O => Label::O,
                })
                .collect(),
            2 => random_iob2(rng, s.len(), 3),
            _ => random_labels(rng, s.len(), 3),
        })
        .collect()
}

/// Conlleval reading of possibly invalid predictions: an orphan `I-t`
/// opens a mention.
pub fn as_iob2(labels: &[Label]) -> Vec<Label> {
    let mut out: Vec<Label> = Vec::new();
    for &l in labels {
        let prev = out.last().and_then(Label::type_id);
        out.push(match l {
            Label::I(t) if prev != Some(t) => Label::B(t),
            other => other,
        });
    }
    out
}

pub fn brute_prf(gold: &Dataset, pred: &[Vec<Label>], typed: bool) -> Prf {
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (s, p) in gold.sentences().iter().zip(pred) {
        let key = |(i, j, t): (usize, usize, usize)| if typed { (i, j, t) } else { (i, j, 0) };
        let g: HashSet<_> = brute_spans(s.labels()).into_iter().map(key).collect();
        let q: HashSet<_> = brute_spans(&as_iob2(p)).into_iter().map(key).collect();
        tp += g.intersection(&q).count();
        np += q.len();
        ng += g.len();
    }
    Prf::from_counts(tp, np - tp, ng - tp)
}

pub struct State {
    pub p: TaggerParams,
    pub a: AdvParams,
}

pub type Block = (&'static str, fn(&mut State) -> &mut [f64]);

pub const THETA: [Block; 6] = [
    ("embed", |s| s.p.embed.as_slice_mut().unwrap()),
    ("case_embed", |s| s.p.case_embed.as_slice_mut().unwrap()),
    ("w1", |s| s.p.w1.as_slice_mut().unwrap()),
    ("b1", |s| s.p.b1.as_slice_mut().unwrap()),
    ("w", |s| s.p.w.as_slice_mut().unwrap()),
    ("b", |s| s.p.b.as_slice_mut().unwrap()),
];

pub const THETA_PRIME: [Block; 3] = [
    ("noise", |s| s.a.noise.as_slice_mut().unwrap()),
    ("w_noisy", |s| s.a.w_noisy.as_slice_mut().unwrap()),
    ("b_noisy", |s| s.a.b_noisy.as_slice_mut().unwrap()),
];

/// Two sentences, every eligible mention flipped.
pub fn grad_fixture() -> (State, Vec<Example>) {
    let ts = types3();
    let s1 = sentence(
        &["Obama", "visited", "the", "new", "city"],
        &["B-PER", "O", "O", "O", "O"],
    );
    let s2 = sentence(
        &["we", "saw", "them", "in", "West", "Bromwich", "."],
        &["O", "O", "O", "O", "B-LOC", "I-LOC", "O"],
    );
    let vocab = Vocab::build(&Dataset::new(vec![s1.clone(), s2.clone()], ts.clone()).unwrap());
    let config = TaggerConfig {
        embed_dim: 4,
        window: 2,
        hidden: 6,
        init_scale: 0.5,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (p, a) = init_params(&config, &vocab, &ts, &mut rng).unwrap();
    let batch = [s1, s2]
        .iter()
        .map(|s| {
            let n = sample_noisy_labels(s, &ts, 1.0, &mut rng);
            assert!(!n.is_clean());
            Example::new(s, &vocab, Some(&n))
        })
        .collect();
    (State { p, a }, batch)
}

pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn numeric_grad(
    state: &mut State,
    batch: &[Example],
    block: fn(&mut State) -> &mut [f64],
    noisy: bool,
) -> Vec<f64> {
    let eps = 1e-6;
    let n = block(state).len();
    (0..n)
        .map(|i| {
            let orig = block(state)[i];
            block(state)[i] = orig + eps;
            let up = batch_losses(&state.p, &state.a, batch);
            block(state)[i] = orig - eps;
            let down = batch_losses(&state.p, &state.a, batch);
            block(state)[i] = orig;
            let (u, d) = if noisy {
                (up.1, down.1)
            } else {
                (up.0, down.0)
            };
            (u - d) / (2.0 * eps)
        })
        .collect()
}

/// Relative error of every analytic gradient block against central
/// differences: `L_true` over θ, then `L_noisy` over θ′.
pub fn gradient_errors() -> Vec<(&'static str, f64)> {
    let (mut state, batch) = grad_fixture();
    let (_, gt, gn) = contextbias::tagger::gradients(&state.p, &state.a, &batch);
    let analytic: [&[f64]; 9] = [
        gt.embed.as_slice().unwrap(),
        gt.case_embed.as_slice().unwrap(),
        gt.w1.as_slice().unwrap(),
        gt.b1.as_slice().unwrap(),
        gt.w.as_slice().unwrap(),
        gt.b.as_slice().unwrap(),
        gn.noise.as_slice().unwrap(),
        gn.w_noisy.as_slice().unwrap(),
        gn.b_noisy.as_slice().unwrap(),
    ];
    THETA
        .iter()
        .map(|b| (b, false))
        .chain(THETA_PRIME.iter().map(|b| (b, true)))
        .zip(analytic)
        .map(|(((name, block), noisy), a)| {
            let numeric = numeric_grad(&mut state, &batch, *block, noisy);
            assert!(
                numeric.iter().any(|v| v.abs() > 1e-6),
                "{name} gradient vanished"
            );
            (*name, rel_err(a, &numeric))
        })
        .collect()
}
