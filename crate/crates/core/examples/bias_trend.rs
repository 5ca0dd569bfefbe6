//! Trains baseline, adv and adv&mask taggers on the synthetic benchmark and
//! prints in-domain and challenge F1.
//!
//! Usage: `bias_trend [seeds] [epochs] [names] [templates] [train_size]`

use std::time::Instant;

use contextbias::benchgen::{gen_synthetic_bias, SyntheticSpec};
use contextbias::tagger::{train, TaggerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arg(i: usize, default: usize) -> usize {
    std::env::args()
        .nth(i)
        .and_then(|a| a.parse().ok())
        .unwrap_or(default)
}

fn main() -> contextbias::Result<()> {
    let seeds = arg(1, 5) as u64;
    let epochs = arg(2, 20);
    let defaults = SyntheticSpec::default();
    let spec = SyntheticSpec {
        names_per_type: arg(3, defaults.names_per_type),
        templates_per_type: arg(4, defaults.templates_per_type),
        train_size: arg(5, defaults.train_size),
        ..defaults
    };
    // Extra config fields as a JSON object, e.g. CONFIG='{"hidden":32}'.
    let mut base = serde_json::to_value(TaggerConfig {
        embed_dim: 32,
        hidden: 64,
        learning_rate: 0.3,
        lr_decay: 0.95,
        epochs,
        ..Default::default()
    })?;
    if let Ok(extra) = std::env::var("CONFIG") {
        let extra: serde_json::Value = serde_json::from_str(&extra)?;
        for (k, v) in extra.as_object().into_iter().flatten() {
            base[k] = v.clone();
        }
    }
    let base: TaggerConfig = serde_json::from_value(base)?;
    let variants = [
        ("baseline", false, false),
        ("adv", true, false),
        ("adv&mask", true, true),
    ];
    let start = Instant::now();
    for (name, use_adv, use_mask) in variants {
        let (mut test, mut chal) = (0.0, 0.0);
        for seed in 0..seeds {
            let bench = gen_synthetic_bias(&spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let config = TaggerConfig {
                seed,
                use_adv,
                use_mask,
                ..base.clone()
            };
            let tagger = train(&bench.train, &config, None, &mut |_| {})?;
            test += tagger.f1(&bench.test)?;
            chal += tagger.f1(&bench.challenge)?;
        }
        let n = seeds as f64;
        println!(
            "{name:<9} test {:6.2} challenge {:6.2} ({:.1}s)",
            100.0 * test / n,
            100.0 * chal / n,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
