use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use super::{TaggerConfig, Vocab, PAD_ID};
use crate::corpus::{repair_iob, Label, Sentence, TypeSet};
use crate::error::{Error, Result};
use crate::robust::{noise_row_count, AdvParams, NoisySequence};

/// θ: everything trained by the true loss.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggerParams {
    /// `V × d`.
    pub embed: Array2<f64>,
    /// `2 × d`; row 1 is added to capitalised tokens, row 0 to the rest.
    pub case_embed: Array2<f64>,
    /// `(2r + 1) d × h`.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `h × L`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl TaggerParams {
    pub fn zeros(vocab_len: usize, config: &TaggerConfig, labels: usize) -> Self {
        let d = config.embed_dim;
        TaggerParams {
            embed: Array2::zeros((vocab_len, d)),
            case_embed: Array2::zeros((2, d)),
            w1: Array2::zeros((config.window_len() * d, config.hidden)),
            b1: Array1::zeros(config.hidden),
            w: Array2::zeros((config.hidden, labels)),
            b: Array1::zeros(labels),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.ncols()
    }

    pub fn radius(&self) -> usize {
        (self.w1.nrows() / self.embed_dim() - 1) / 2
    }

    pub fn is_finite(&self) -> bool {
        self.embed
            .iter()
            .chain(&self.case_embed)
            .chain(&self.w1)
            .chain(&self.b1)
            .chain(&self.w)
            .chain(&self.b)
            .all(|v| v.is_finite())
    }
}

fn fill_uniform<R: Rng + ?Sized>(a: &mut Array2<f64>, scale: f64, rng: &mut R) {
    if scale == 0.0 {
        return;
    }
    for v in a.iter_mut() {
        *v = rng.random_range(-scale..=scale);
    }
}

/// Uniform `[-s, s]` weights, zero biases. Draw order is fixed, so equal
/// seeds give bit-identical parameters.
pub fn init_params<R: Rng + ?Sized>(
    config: &TaggerConfig,
    vocab: &Vocab,
    typeset: &TypeSet,
    rng: &mut R,
) -> Result<(TaggerParams, AdvParams)> {
    config.validate()?;
    if vocab.len() <= super::MASK_ID + 1 {
        return Err(Error::Config("vocabulary has no words".into()));
    }
    let labels = typeset.label_count();
    let scale = config.init_scale;
    let mut p = TaggerParams::zeros(vocab.len(), config, labels);
    fill_uniform(&mut p.embed, scale, rng);
    fill_uniform(&mut p.case_embed, scale, rng);
    fill_uniform(&mut p.w1, scale, rng);
    fill_uniform(&mut p.w, scale, rng);
    let mut adv = AdvParams::zeros(typeset.len(), config.embed_dim, config.hidden);
    debug_assert_eq!(adv.noise.nrows(), noise_row_count(typeset.len()));
    fill_uniform(&mut adv.noise, scale, rng);
    fill_uniform(&mut adv.w_noisy, scale, rng);
    Ok((p, adv))
}

/// A sentence mapped to vocabulary ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub upper: Vec<bool>,
}

impl Encoded {
    pub fn new(sentence: &Sentence, vocab: &Vocab) -> Self {
        Encoded {
            ids: sentence.surfaces().map(|w| vocab.id(w)).collect(),
            upper: sentence.tokens().iter().map(|t| t.starts_upper()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Noisy-head targets for one sentence, as dense label indices.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyTargets {
    pub labels: Vec<usize>,
    pub rows: Vec<Option<usize>>,
}

impl From<&NoisySequence> for NoisyTargets {
    fn from(n: &NoisySequence) -> Self {
        NoisyTargets {
            labels: n.labels.iter().map(Label::index).collect(),
            rows: n.noise_rows.clone(),
        }
    }
}

/// One training sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Encoded,
    pub gold: Vec<usize>,
    pub noisy: Option<NoisyTargets>,
}

impl Example {
    pub fn new(sentence: &Sentence, vocab: &Vocab, noisy: Option<&NoisySequence>) -> Self {
        Example {
            input: Encoded::new(sentence, vocab),
            gold: sentence.labels().iter().map(Label::index).collect(),
            noisy: noisy.filter(|n| !n.is_clean()).map(NoisyTargets::from),
        }
    }
}

/// Activations of a batch of sentences, rows stacked sentence by sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache {
    /// Input representations `u_i`, `T × d`.
    pub u: Array2<f64>,
    /// Windowed encoder input, `T × (2r + 1) d`.
    pub x: Array2<f64>,
    /// `tanh` hidden layer, `T × h`.
    pub h: Array2<f64>,
    /// True-head logits, `T × L`.
    pub f: Array2<f64>,
    /// Noisy-head logits, `T × L`.
    pub f_noisy: Array2<f64>,
    /// Row offset of each sentence, plus the total as the last entry.
    pub offsets: Vec<usize>,
}

fn offsets_of(inputs: &[&Encoded]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(inputs.len() + 1);
    let mut total = 0;
    offsets.push(0);
    for e in inputs {
        total += e.len();
        offsets.push(total);
    }
    offsets
}

fn encode_inputs(
    params: &TaggerParams,
    adv: Option<&AdvParams>,
    inputs: &[&Encoded],
    noise: &[Option<&[Option<usize>]>],
    offsets: &[usize],
) -> (Array2<f64>, Array2<f64>) {
    let d = params.embed_dim();
    let r = params.radius();
    let total = *offsets.last().unwrap();
    let mut u = Array2::zeros((total, d));
    for (s, e) in inputs.iter().enumerate() {
        let rows = noise.get(s).copied().flatten();
        for i in 0..e.len() {
            let mut row = u.row_mut(offsets[s] + i);
            row.assign(&params.embed.row(e.ids[i]));
            row += &params.case_embed.row(usize::from(e.upper[i]));
            if let (Some(rows), Some(adv)) = (rows, adv) {
                if let Some(k) = rows[i] {
                    row += &adv.noise.row(k);
                }
            }
        }
    }

    let mut x = Array2::zeros((total, (2 * r + 1) * d));
    let pad = params.embed.row(PAD_ID);
    for (s, e) in inputs.iter().enumerate() {
        let n = e.len() as isize;
        for i in 0..e.len() {
            let t = offsets[s] + i;
            for o in 0..=2 * r {
                let pos = i as isize + o as isize - r as isize;
                let mut dst = x.slice_mut(s![t, o * d..(o + 1) * d]);
                if (0..n).contains(&pos) {
                    dst.assign(&u.row(offsets[s] + pos as usize));
                } else {
                    dst.assign(&pad);
                }
            }
        }
    }
    (u, x)
}

fn hidden(params: &TaggerParams, x: &Array2<f64>) -> Array2<f64> {
    let mut h = x.dot(&params.w1);
    h += &params.b1;
    h.mapv_inplace(f64::tanh);
    h
}

fn affine(h: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut f = h.dot(w);
    f += b;
    f
}

/// Runs both heads over several sentences. `noise[s]`, when present, gives
/// the noise row of each token of sentence `s`.
pub fn forward_batch(
    params: &TaggerParams,
    adv: &AdvParams,
    inputs: &[&Encoded],
    noise: &[Option<&[Option<usize>]>],
) -> ForwardCache {
    let offsets = offsets_of(inputs);
    let (u, x) = encode_inputs(params, Some(adv), inputs, noise, &offsets);
    let h = hidden(params, &x);
    let f = affine(&h, &params.w, &params.b);
    let f_noisy = affine(&h, &adv.w_noisy, &adv.b_noisy);
    ForwardCache {
        u,
        x,
        h,
        f,
        f_noisy,
        offsets,
    }
}

pub fn forward(
    params: &TaggerParams,
    adv: &AdvParams,
    input: &Encoded,
    noise: Option<&[Option<usize>]>,
) -> ForwardCache {
    forward_batch(params, adv, &[input], &[noise])
}

fn softmax_row(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e = row.mapv(|v| (v - max).exp());
    let z = e.sum();
    e /= z;
    e
}

/// Gradient of the true loss with respect to θ.
#[derive(Clone, Debug, PartialEq)]
pub struct TrueGrads {
    pub embed: Array2<f64>,
    pub case_embed: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Gradient of the noisy loss with respect to θ′.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyGrads {
    pub noise: Array2<f64>,
    pub w_noisy: Array2<f64>,
    pub b_noisy: Array1<f64>,
}

/// Noisy-head mask and targets, one entry per stacked token row.
fn noisy_targets(batch: &[Example]) -> Vec<Option<usize>> {
    batch
        .iter()
        .flat_map(|ex| {
            (0..ex.gold.len()).map(move |i| match &ex.noisy {
                Some(n) if n.labels[i] != ex.gold[i] => Some(n.labels[i]),
                _ => None,
            })
        })
        .collect()
}

fn cache_for(params: &TaggerParams, adv: &AdvParams, batch: &[Example]) -> ForwardCache {
    let inputs: Vec<&Encoded> = batch.iter().map(|e| &e.input).collect();
    let noise: Vec<Option<&[Option<usize>]>> = batch
        .iter()
        .map(|e| e.noisy.as_ref().map(|n| n.rows.as_slice()))
        .collect();
    forward_batch(params, adv, &inputs, &noise)
}

/// `L_true` is the mean token cross-entropy of the true head; `L_noisy` is
/// the per-sentence sum over flipped tokens, averaged over sentences.
pub fn batch_losses(params: &TaggerParams, adv: &AdvParams, batch: &[Example]) -> (f64, f64) {
    let cache = cache_for(params, adv, batch);
    losses_from(&cache, batch)
}

fn losses_from(cache: &ForwardCache, batch: &[Example]) -> (f64, f64) {
    let total = cache.f.nrows() as f64;
    let gold: Vec<usize> = batch.iter().flat_map(|e| e.gold.iter().copied()).collect();
    let loss_true = gold
        .iter()
        .enumerate()
        .map(|(t, &y)| -crate::robust::log_softmax_at(cache.f.row(t), y))
        .sum::<f64>()
        / total;
    let loss_noisy = noisy_targets(batch)
        .iter()
        .enumerate()
        .filter_map(|(t, y)| y.map(|y| -crate::robust::log_softmax_at(cache.f_noisy.row(t), y)))
        .sum::<f64>()
        / batch.len() as f64;
    (loss_true, loss_noisy)
}

/// Losses and both gradients from one shared forward pass.
///
/// The true gradient treats θ′ as constant and the noisy gradient treats θ
/// as constant; the noisy gradient reaches the noise embeddings through the
/// (fixed) encoder.
pub fn gradients(
    params: &TaggerParams,
    adv: &AdvParams,
    batch: &[Example],
) -> ((f64, f64), TrueGrads, NoisyGrads) {
    let cache = cache_for(params, adv, batch);
    let losses = losses_from(&cache, batch);
    let total = cache.f.nrows();
    let d = params.embed_dim();
    let r = params.radius();
    let dtanh = cache.h.mapv(|v| 1.0 - v * v);

    let mut d_f = Array2::zeros(cache.f.raw_dim());
    for (t, &y) in batch.iter().flat_map(|e| e.gold.iter()).enumerate() {
        let mut row = softmax_row(cache.f.row(t));
        row[y] -= 1.0;
        row /= total as f64;
        d_f.row_mut(t).assign(&row);
    }
    let w = cache.h.t().dot(&d_f);
    let b = d_f.sum_axis(Axis(0));
    let d_z = d_f.dot(&params.w.t()) * &dtanh;
    let w1 = cache.x.t().dot(&d_z);
    let b1 = d_z.sum_axis(Axis(0));
    let d_x = d_z.dot(&params.w1.t());

    let mut embed = Array2::zeros(params.embed.raw_dim());
    let mut case_embed = Array2::zeros(params.case_embed.raw_dim());
    for (s, ex) in batch.iter().enumerate() {
        let n = ex.input.len() as isize;
        for i in 0..ex.input.len() {
            let t = cache.offsets[s] + i;
            for o in 0..=2 * r {
                let pos = i as isize + o as isize - r as isize;
                let g = d_x.slice(s![t, o * d..(o + 1) * d]);
                if (0..n).contains(&pos) {
                    let pos = pos as usize;
                    let mut e = embed.row_mut(ex.input.ids[pos]);
                    e += &g;
                    let mut c = case_embed.row_mut(usize::from(ex.input.upper[pos]));
                    c += &g;
                } else {
                    let mut e = embed.row_mut(PAD_ID);
                    e += &g;
                }
            }
        }
    }

    let mut noisy = NoisyGrads {
        noise: Array2::zeros(adv.noise.raw_dim()),
        w_noisy: Array2::zeros(adv.w_noisy.raw_dim()),
        b_noisy: Array1::zeros(adv.b_noisy.raw_dim()),
    };
    let targets = noisy_targets(batch);
    if targets.iter().any(Option::is_some) {
        let scale = 1.0 / batch.len() as f64;
        let mut d_fn = Array2::zeros(cache.f_noisy.raw_dim());
        for (t, y) in targets.iter().enumerate() {
            if let Some(y) = *y {
                let mut row = softmax_row(cache.f_noisy.row(t));
                row[y] -= 1.0;
                row *= scale;
                d_fn.row_mut(t).assign(&row);
            }
        }
        noisy.w_noisy = cache.h.t().dot(&d_fn);
        noisy.b_noisy = d_fn.sum_axis(Axis(0));
        let d_zn = d_fn.dot(&adv.w_noisy.t()) * &dtanh;
        let d_xn = d_zn.dot(&params.w1.t());
        for (s, ex) in batch.iter().enumerate() {
            let Some(nt) = &ex.noisy else { continue };
            let n = ex.input.len() as isize;
            for i in 0..ex.input.len() {
                let t = cache.offsets[s] + i;
                for o in 0..=2 * r {
                    let pos = i as isize + o as isize - r as isize;
                    if !(0..n).contains(&pos) {
                        continue;
                    }
                    if let Some(k) = nt.rows[pos as usize] {
                        let mut row = noisy.noise.row_mut(k);
                        row += &d_xn.slice(s![t, o * d..(o + 1) * d]);
                    }
                }
            }
        }
    }

    (
        losses,
        TrueGrads {
            embed,
            case_embed,
            w1,
            b1,
            w,
            b,
        },
        noisy,
    )
}

/// Plain SGD on θ. The embedding table is left untouched when frozen.
pub fn apply_true_update(
    params: &mut TaggerParams,
    grads: &TrueGrads,
    lr: f64,
    freeze_embeddings: bool,
) {
    if !freeze_embeddings {
        params.embed.scaled_add(-lr, &grads.embed);
    }
    params.case_embed.scaled_add(-lr, &grads.case_embed);
    params.w1.scaled_add(-lr, &grads.w1);
    params.b1.scaled_add(-lr, &grads.b1);
    params.w.scaled_add(-lr, &grads.w);
    params.b.scaled_add(-lr, &grads.b);
}

/// Plain SGD on θ′.
pub fn apply_noisy_update(adv: &mut AdvParams, grads: &NoisyGrads, lr: f64) {
    adv.noise.scaled_add(-lr, &grads.noise);
    adv.w_noisy.scaled_add(-lr, &grads.w_noisy);
    adv.b_noisy.scaled_add(-lr, &grads.b_noisy);
}

/// Per-token argmax of the true head followed by IOB repair. Noise
/// embeddings are never applied here.
pub fn predict_labels(params: &TaggerParams, vocab: &Vocab, sentence: &Sentence) -> Vec<Label> {
    let input = Encoded::new(sentence, vocab);
    let offsets = offsets_of(&[&input]);
    let (_, x) = encode_inputs(params, None, &[&input], &[], &offsets);
    let f = affine(&hidden(params, &x), &params.w, &params.b);
    decode(&f)
}

/// Argmax per row then IOB repair.
pub fn decode(logits: &Array2<f64>) -> Vec<Label> {
    let raw: Vec<Label> = logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            Label::from_index(best)
        })
        .collect();
    repair_iob(&raw)
}
