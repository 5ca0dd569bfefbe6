mod common;

use std::collections::HashSet;

use common::{eligibility_fixture, random_dataset, sentence, types3};
use contextbias::corpus::{eligible_mentions, to_conll, validate_iob, Dataset, Label, TypeSet};
use contextbias::robust::{
    loss_noisy, mask_augment, noise_index, noise_row_count, sample_noisy_labels, MASK_TOKEN,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn typeset(k: usize) -> TypeSet {
    TypeSet::new((0..k).map(|i| format!("T{i}"))).unwrap()
}

#[test]
fn noise_index_is_a_bijection() {
    for k in 2..=6 {
        let ts = typeset(k);
        let mut seen = HashSet::new();
        for from in 0..k {
            for to in 0..k {
                if from == to {
                    assert!(noise_index(from, to, &ts).is_err());
                } else {
                    let i = noise_index(from, to, &ts).unwrap();
                    assert!(i < noise_row_count(k));
                    assert!(seen.insert(i));
                }
            }
        }
        assert_eq!(seen.len(), k * (k - 1));
    }
    assert_eq!(noise_index(0, 1, &types3()).unwrap(), 0);
}

/// 10,000 eligible single-token mentions over K = 3 types.
fn eligible_corpus() -> Dataset {
    let labels = ["B-PER", "B-LOC", "B-ORG"];
    let s = (0..10_000)
        .map(|i| sentence(&["Zed", "is", "a", "name"], &[labels[i % 3], "O", "O", "O"]))
        .collect();
    Dataset::new(s, types3()).unwrap()
}

#[test]
fn flip_statistics() {
    let ds = eligible_corpus();
    let ts = types3();
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let (mut flips, mut first_alt, mut self_flips) = (0usize, 0usize, 0usize);
    for s in ds.sentences() {
        let n = sample_noisy_labels(s, &ts, 0.8, &mut rng);
        for (m, to) in &n.flipped {
            flips += 1;
            self_flips += (*to == m.type_id) as usize;
            // Lower-indexed of the two alternatives.
            first_alt += (*to == if m.type_id == 0 { 1 } else { 0 }) as usize;
        }
    }
    let rate = flips as f64 / 10_000.0;
    assert!((0.78..=0.82).contains(&rate), "flip rate {rate}");
    assert!((rate - 0.8).abs() < 3.0 * (0.8f64 * 0.2 / 10_000.0).sqrt());
    let share = first_alt as f64 / flips as f64;
    assert!((share - 0.5).abs() <= 0.03, "alternative share {share}");
    assert_eq!(self_flips, 0);
}

#[test]
fn extreme_lambdas() {
    let ds = random_dataset(&mut ChaCha8Rng::seed_from_u64(1), 200, &types3());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for s in ds.sentences() {
        let n = sample_noisy_labels(s, &types3(), 0.0, &mut rng);
        assert_eq!(n.labels, s.labels());
        assert!(n.noise_rows.iter().all(Option::is_none));
        let n = sample_noisy_labels(s, &types3(), 1.0, &mut rng);
        assert_eq!(n.flipped.len(), eligible_mentions(s).len());
        assert!(n.flipped.iter().all(|(m, to)| *to != m.type_id));
    }
}

#[test]
fn noisy_sequences_keep_their_invariant() {
    let ts = types3();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = random_dataset(&mut rng, 10_000, &ts);
    for s in ds.sentences() {
        let lambda = rng.random::<f64>();
        let n = sample_noisy_labels(s, &ts, lambda, &mut rng);
        assert_eq!(n.labels.len(), s.len());
        assert!(validate_iob(&n.labels).is_empty());
        let eligible = eligible_mentions(s);
        let mut inside = vec![None; s.len()];
        for (m, to) in &n.flipped {
            assert!(eligible.contains(m));
            let row = noise_index(m.type_id, *to, &ts).unwrap();
            for (i, slot) in inside.iter_mut().enumerate().take(m.end + 1).skip(m.start) {
                *slot = Some(row);
                let want = if i == m.start {
                    Label::B(*to)
                } else {
                    Label::I(*to)
                };
                assert_eq!(n.labels[i], want);
            }
        }
        assert_eq!(n.noise_rows, inside);
        for (i, slot) in inside.iter().enumerate() {
            if slot.is_none() {
                assert_eq!(n.labels[i], s.labels()[i]);
            }
        }
    }
}

#[test]
fn sampling_is_seeded_and_varies_across_epochs() {
    let ds = Dataset::new(
        eligible_corpus()
            .into_sentences()
            .into_iter()
            .take(100)
            .collect(),
        types3(),
    )
    .unwrap();
    let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<Label>> {
        ds.sentences()
            .iter()
            .map(|s| sample_noisy_labels(s, &types3(), 0.8, rng).labels)
            .collect()
    };
    assert_eq!(
        draw(&mut ChaCha8Rng::seed_from_u64(4)),
        draw(&mut ChaCha8Rng::seed_from_u64(4))
    );
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let epochs: Vec<_> = (0..20).map(|_| draw(&mut rng)).collect();
    assert!(epochs.windows(2).any(|w| w[0] != w[1]));
}

fn log_softmax(row: &[f64], y: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::MIN, f64::max);
    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
    row[y] - max - z.ln()
}

#[test]
fn noisy_loss_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let n = rng.random_range(1..10);
        let logits = Array2::from_shape_fn((n, 7), |_| rng.random_range(-3.0..3.0));
        let gold = common::random_iob2(&mut rng, n, 3);
        let noisy = common::random_iob2(&mut rng, n, 3);
        let mut want = 0.0;
        for i in 0..n {
            if noisy[i] != gold[i] {
                want -= log_softmax(logits.row(i).as_slice().unwrap(), noisy[i].index());
            }
        }
        let got = loss_noisy(logits.view(), &noisy, &gold);
        assert!((got - want).abs() < 1e-12);
        assert_eq!(loss_noisy(logits.view(), &gold, &gold), 0.0);
    }
    let uniform = Array2::zeros((1, 7));
    let got = loss_noisy(uniform.view(), &[Label::B(1)], &[Label::B(0)]);
    assert!((got - 7f64.ln()).abs() < 1e-15);
}

#[test]
fn masking_accounting() {
    let ds = eligibility_fixture();
    let out = mask_augment(&ds);
    assert_eq!(out.len(), ds.len() + 35);
    assert_eq!(&out.sentences()[..ds.len()], ds.sentences());
    let original = Dataset::new(out.sentences()[..ds.len()].to_vec(), types3()).unwrap();
    assert_eq!(to_conll(&original), to_conll(&ds));
    for s in &out.sentences()[ds.len()..] {
        assert!(s.is_synthetic());
        let masks: Vec<usize> = s
            .surfaces()
            .enumerate()
            .filter(|(_, w)| *w == MASK_TOKEN)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(masks.len(), 1);
        assert!(matches!(s.labels()[masks[0]], Label::B(_)));
    }

    let two = sentence(
        &["Ana", "went", "to", "the", "city", "of", "Paris"],
        &["B-PER", "O", "O", "O", "O", "O", "B-LOC"],
    );
    let none = sentence(&["Ana", "met", "Bo"], &["B-PER", "O", "B-PER"]);
    let out = mask_augment(&Dataset::new(vec![two, none], types3()).unwrap());
    assert_eq!(out.len(), 4);
    let masked: Vec<Vec<&str>> = out.sentences()[2..]
        .iter()
        .map(|s| s.surfaces().collect())
        .collect();
    assert_eq!(masked[0][0], MASK_TOKEN);
    assert_eq!(masked[1][6], MASK_TOKEN);
    assert_eq!(out.sentences()[3].labels()[6], Label::B(1));
}
