mod common;

use std::collections::{BTreeMap, HashMap, HashSet};

use common::{boundary_stream, brute_gap, random_dataset, sentence, types3};
use contextbias::benchgen::{
    gen_synthetic_bias, lowres_sample, permute_mentions, read_candidates, select_nrb, select_wts,
    Candidate, SelectionOptions, SelectionThresholds, SyntheticSpec,
};
use contextbias::corpus::{eligible_mentions, Dataset, Label};
use contextbias::evalkit::mention_prf;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ids(c: &[Candidate]) -> HashSet<String> {
    c.iter().map(|c| c.id.clone().unwrap()).collect()
}

#[test]
fn selection_matches_brute_force_predicates() {
    let (stream, table) = boundary_stream();
    let ts = types3();
    let th = SelectionThresholds::default();
    let opts = SelectionOptions::default();
    let (mut want_nrb, mut want_wts) = (HashSet::new(), HashSet::new());
    for c in &stream {
        let (top, gap) = brute_gap(&table.0[&c.tokens]);
        let context_right = ts.name(top) == c.gold_type;
        let confident = c.weak_conf > 0.85;
        if c.weak_label != c.gold_type && confident && context_right && gap >= 0.25 {
            want_nrb.insert(c.id.clone().unwrap());
        }
        if c.weak_label == c.gold_type && confident && context_right && gap < 0.1 {
            want_wts.insert(c.id.clone().unwrap());
        }
    }
    let nrb = ids(&select_nrb(&stream, &table, &ts, &th, opts).unwrap());
    let wts = ids(&select_wts(&stream, &table, &ts, &th, opts).unwrap());
    assert_eq!(nrb, want_nrb);
    assert_eq!(wts, want_wts);
    assert!(nrb.contains("figure"));
    assert!(nrb.is_disjoint(&wts));
    assert!(!nrb.is_empty() && !wts.is_empty());

    let mut shuffled = stream.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(
        ids(&select_nrb(&shuffled, &table, &ts, &th, opts).unwrap()),
        nrb
    );
    assert_eq!(
        ids(&select_wts(&shuffled, &table, &ts, &th, opts).unwrap()),
        wts
    );
}

#[test]
fn candidate_files_report_bad_lines() {
    let good = r#"{"tokens":["Bo","ran"],"span":[0,0],"gold_type":"PER","weak_label":"O","weak_conf":0.9}"#;
    assert_eq!(
        read_candidates(&format!("{good}\n\n{good}\n"))
            .unwrap()
            .len(),
        2
    );
    let err = read_candidates(&format!("{good}\n{{oops\n")).unwrap_err();
    assert!(err.to_string().contains('2'), "{err}");
}

/// Surfaces and types of every mention slot, in order.
fn slots(ds: &Dataset) -> (Vec<Vec<String>>, Vec<usize>) {
    let mut surfaces = Vec::new();
    let mut types = Vec::new();
    for s in ds.sentences() {
        for m in s.mentions() {
            surfaces.push(
                s.surfaces()
                    .skip(m.start)
                    .take(m.token_count())
                    .map(str::to_string)
                    .collect(),
            );
            types.push(m.type_id);
        }
    }
    (surfaces, types)
}

fn context_words(ds: &Dataset) -> Vec<Vec<String>> {
    ds.sentences()
        .iter()
        .map(|s| {
            s.surfaces()
                .zip(s.labels())
                .filter(|(_, l)| **l == Label::O)
                .map(|(w, _)| w.to_string())
                .collect()
        })
        .collect()
}

#[test]
fn permutation_audit() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut moved = 0;
    for seed in 0..50 {
        let ds = random_dataset(&mut rng, 20, &types3());
        let out = permute_mentions(&ds, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(
            out,
            permute_mentions(&ds, &mut ChaCha8Rng::seed_from_u64(seed))
        );
        assert_eq!(out.len(), ds.len());
        let (before, types_before) = slots(&ds);
        let (after, types_after) = slots(&out);
        assert_eq!(types_after, types_before);
        let mut a = before.clone();
        let mut b = after.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(context_words(&out), context_words(&ds));
        moved += (before != after) as usize;
    }
    assert!(moved > 40);
}

#[test]
fn lowres_draws_are_uniform() {
    let mut s = Vec::new();
    for i in 0..10 {
        let name = format!("N{i}");
        s.push(sentence(
            &[&name, "is", "a", "city"],
            &["B-LOC", "O", "O", "O"],
        ));
        s.push(sentence(&[&name, "ran"], &["B-PER", "O"]));
    }
    let ds = Dataset::new(s, types3()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let draws = 10_000;
    for _ in 0..draws {
        let one = lowres_sample(&ds, 1, &mut rng).unwrap();
        assert!(!eligible_mentions(&one.sentences()[0]).is_empty());
        *counts
            .entry(one.sentences()[0].surfaces().next().unwrap().to_string())
            .or_default() += 1;
    }
    assert_eq!(counts.len(), 10);
    let sigma = (0.1f64 * 0.9 / draws as f64).sqrt();
    for (name, c) in counts {
        let f = c as f64 / draws as f64;
        assert!((f - 0.1).abs() <= 3.0 * sigma, "{name}: {f}");
    }
    let all = lowres_sample(&ds, 10, &mut rng).unwrap();
    let mut got: Vec<_> = all.sentences().to_vec();
    got.sort_by_key(|s| s.surfaces().next().unwrap().to_string());
    let mut want: Vec<_> = ds
        .sentences()
        .iter()
        .filter(|s| s.len() == 4)
        .cloned()
        .collect();
    want.sort_by_key(|s| s.surfaces().next().unwrap().to_string());
    assert_eq!(got, want);
    assert!(lowres_sample(&ds, 11, &mut rng)
        .unwrap_err()
        .to_string()
        .contains("10"));
}

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        train_size: 1500,
        test_size: 300,
        challenge_size: 300,
        ..Default::default()
    }
}

/// Tags each name with its majority training type; context is ignored.
fn memorize_names(train: &Dataset, target: &Dataset) -> Vec<Vec<Label>> {
    let mut votes: HashMap<String, Vec<usize>> = HashMap::new();
    for s in train.sentences() {
        for m in s.mentions() {
            let v = votes
                .entry(m.surface.clone())
                .or_insert_with(|| vec![0; train.typeset().len()]);
            v[m.type_id] += 1;
        }
    }
    target
        .sentences()
        .iter()
        .map(|s| {
            s.surfaces()
                .zip(s.labels())
                .map(|(w, l)| match (l, votes.get(w)) {
                    (Label::O, _) => Label::O,
                    (_, Some(v)) => Label::B(
                        (0..v.len())
                            .max_by_key(|&t| (v[t], usize::MAX - t))
                            .unwrap(),
                    ),
                    (_, None) => Label::O,
                })
                .collect()
        })
        .collect()
}

#[test]
fn synthetic_benchmark_construction() {
    let spec = small_spec();
    let bench = gen_synthetic_bias(&spec, &mut ChaCha8Rng::seed_from_u64(32)).unwrap();
    let again = gen_synthetic_bias(&spec, &mut ChaCha8Rng::seed_from_u64(32)).unwrap();
    assert_eq!(bench, again);
    assert_eq!(
        (bench.train.len(), bench.test.len(), bench.challenge.len()),
        (1500, 300, 300)
    );

    let owner: HashMap<&str, usize> = bench
        .pools
        .names
        .iter()
        .enumerate()
        .flat_map(|(t, ns)| ns.iter().map(move |n| (n.as_str(), t)))
        .collect();
    let mut train_pairs = HashSet::new();
    for s in bench.train.sentences().iter().chain(bench.test.sentences()) {
        for m in s.mentions() {
            assert_eq!(owner[m.surface.as_str()], m.type_id);
            train_pairs.insert((m.surface.clone(), m.type_id));
        }
    }
    for s in bench.challenge.sentences() {
        let m = &s.mentions()[0];
        assert_ne!(owner[m.surface.as_str()], m.type_id);
        assert!(!train_pairs.contains(&(m.surface.clone(), m.type_id)));
        let tpl_words: Vec<&str> = s.surfaces().filter(|w| *w != m.surface).collect();
        let from = bench.pools.templates[m.type_id].iter().any(|t| {
            t.before
                .iter()
                .chain(&t.after)
                .map(String::as_str)
                .collect::<Vec<_>>()
                == tpl_words
        });
        assert!(from, "challenge context is not a template of the gold type");
    }

    let memo = memorize_names(&bench.train, &bench.challenge);
    let f1 = mention_prf(&bench.challenge, &memo).unwrap().overall.f1;
    assert!(f1 <= 1.0 / 3.0, "memorizer challenge F1 {f1}");
    let memo_test = memorize_names(&bench.train, &bench.test);
    assert_eq!(
        mention_prf(&bench.test, &memo_test).unwrap().overall.f1,
        1.0
    );
}

#[test]
fn leak_rate_mixes_training_pairs() {
    let spec = SyntheticSpec {
        leak_rate: 0.3,
        ..small_spec()
    };
    let bench = gen_synthetic_bias(&spec, &mut ChaCha8Rng::seed_from_u64(33)).unwrap();
    let owner: HashMap<&str, usize> = bench
        .pools
        .names
        .iter()
        .enumerate()
        .flat_map(|(t, ns)| ns.iter().map(move |n| (n.as_str(), t)))
        .collect();
    let crossed = bench
        .train
        .sentences()
        .iter()
        .filter(|s| {
            s.mentions()
                .iter()
                .any(|m| owner[m.surface.as_str()] != m.type_id)
        })
        .count() as f64
        / bench.train.len() as f64;
    assert!((crossed - 0.3).abs() < 0.05, "{crossed}");

    for bad in [
        SyntheticSpec {
            train_size: 0,
            ..small_spec()
        },
        SyntheticSpec {
            leak_rate: 1.5,
            ..small_spec()
        },
        SyntheticSpec {
            types: vec!["X".into()],
            ..small_spec()
        },
    ] {
        assert!(gen_synthetic_bias(&bad, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
