//! Exact-match scoring of predicted mentions and a paired t-test for
//! comparing runs.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{repair_iob, Dataset, Label, TypeId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Prf {
    /// Ratios with the 0/0 = 0 convention.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

/// `(start, end, type)` spans of a label sequence. Orphan `I-` tags open a
/// new span, as conlleval does.
pub fn spans(labels: &[Label]) -> Vec<(usize, usize, TypeId)> {
    let labels = repair_iob(labels);
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        if let Label::B(t) = labels[i] {
            let mut j = i;
            while j + 1 < labels.len() && labels[j + 1] == Label::I(t) {
                j += 1;
            }
            out.push((i, j, t));
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

fn check_aligned(gold: &Dataset, pred: &[Vec<Label>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Misaligned {
            index: gold.len().min(pred.len()),
            msg: format!("{} gold sentences, {} predicted", gold.len(), pred.len()),
        });
    }
    for (index, (g, p)) in gold.sentences().iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Misaligned {
                index,
                msg: format!("{} gold labels, {} predicted", g.len(), p.len()),
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MentionScores {
    pub overall: Prf,
    pub per_type: BTreeMap<String, Prf>,
}

/// Micro-averaged exact `(start, end, type)` matching.
pub fn mention_prf(gold: &Dataset, pred: &[Vec<Label>]) -> Result<MentionScores> {
    check_aligned(gold, pred)?;
    let k = gold.typeset().len();
    let mut counts = vec![(0usize, 0usize, 0usize); k];
    for (g, p) in gold.sentences().iter().zip(pred) {
        let gs: HashSet<_> = spans(g.labels()).into_iter().collect();
        let ps: HashSet<_> = spans(p).into_iter().collect();
        for &(_, _, t) in ps.intersection(&gs) {
            counts[t].0 += 1;
        }
        for &(_, _, t) in ps.difference(&gs) {
            counts[t].1 += 1;
        }
        for &(_, _, t) in gs.difference(&ps) {
            counts[t].2 += 1;
        }
    }
    let (tp, fp, fn_) = counts
        .iter()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    let per_type = gold
        .typeset()
        .names()
        .iter()
        .zip(&counts)
        .map(|(n, &(tp, fp, fn_))| (n.clone(), Prf::from_counts(tp, fp, fn_)))
        .collect();
    Ok(MentionScores {
        overall: Prf::from_counts(tp, fp, fn_),
        per_type,
    })
}

/// Like [`mention_prf`] but a match only needs the same `(start, end)`.
pub fn boundary_prf(gold: &Dataset, pred: &[Vec<Label>]) -> Result<Prf> {
    check_aligned(gold, pred)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (g, p) in gold.sentences().iter().zip(pred) {
        let gs: HashSet<_> = spans(g.labels())
            .into_iter()
            .map(|(s, e, _)| (s, e))
            .collect();
        let ps: HashSet<_> = spans(p).into_iter().map(|(s, e, _)| (s, e)).collect();
        tp += ps.intersection(&gs).count();
        fp += ps.difference(&gs).count();
        fn_ += gs.difference(&ps).count();
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    /// Two-sided.
    pub p: f64,
}

/// Paired-sample t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Degenerate(format!(
            "paired samples of different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Degenerate("need at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // Constant shifts leave only rounding noise in the variance.
    if var.is_nan() || var <= (1e-12 * mean.abs()).powi(2) {
        return Err(Error::Degenerate(
            "differences have zero variance; t is undefined".into(),
        ));
    }
    let t = mean / (var / n as f64).sqrt();
    let df = n - 1;
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, df as f64),
    })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom, via the
/// regularized incomplete beta `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    incomplete_beta(x, df / 2.0, 0.5)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9.
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub config_hash: String,
}

/// Machine-readable evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Prf,
    pub per_type: BTreeMap<String, Prf>,
    pub boundary: Prf,
    pub metadata: RunMetadata,
}

impl EvalReport {
    pub fn build(gold: &Dataset, pred: &[Vec<Label>], metadata: RunMetadata) -> Result<Self> {
        let scores = mention_prf(gold, pred)?;
        Ok(EvalReport {
            overall: scores.overall,
            per_type: scores.per_type,
            boundary: boundary_prf(gold, pred)?,
            metadata,
        })
    }

    pub fn tsv_header() -> &'static str {
        "name\tprecision\trecall\tf1\tboundary_f1\tseed\tconfig_hash"
    }

    pub fn tsv_row(&self, name: &str) -> String {
        format!(
            "{name}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}",
            self.overall.precision,
            self.overall.recall,
            self.overall.f1,
            self.boundary.f1,
            self.metadata.seed,
            self.metadata.config_hash
        )
    }
}

/// Stable 64-bit FNV-1a digest, hex encoded.
pub fn stable_hash(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}
