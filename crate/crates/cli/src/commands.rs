use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use contextbias::benchgen::{
    candidates_to_dataset, gen_synthetic_bias, lowres_sample, permute_mentions, read_candidates,
    select_nrb, select_wts, write_candidates, SelectionOptions,
};
use contextbias::corpus::{parse_conll, to_conll, Dataset, Sentence, TypeSet};
use contextbias::evalkit::{paired_t_test, stable_hash, EvalReport, RunMetadata};
use contextbias::lm::{abstract_entities, tag_slot, train_kn, KnModel};
use contextbias::robust::mask_augment;
use contextbias::tagger::{train, Tagger};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{
    check_output, read_input, read_input_bytes, sidecar, write_output, CliResult, Failure,
    Manifest, RunConfig,
};
use crate::Command;

pub(crate) fn dispatch(
    command: Command,
    config: &RunConfig,
    manifest: Option<PathBuf>,
) -> CliResult<()> {
    let (name, m) = match command {
        Command::Train(a) => ("train", cmd_train(a, config)?),
        Command::Eval(a) => ("eval", cmd_eval(a, config)?),
        Command::Predict(a) => ("predict", cmd_predict(a, config)?),
        Command::LmTrain(a) => ("lm-train", cmd_lm_train(a, config)?),
        Command::LmTag(a) => ("lm-tag", cmd_lm_tag(a, config)?),
        Command::BuildNrb(a) => ("build-nrb", cmd_select(a, config, false)?),
        Command::BuildWts(a) => ("build-wts", cmd_select(a, config, true)?),
        Command::Augment(a) => ("augment", cmd_augment(a, config)?),
        Command::Permute(a) => ("permute", cmd_permute(a, config)?),
        Command::Lowres(a) => ("lowres", cmd_lowres(a, config)?),
        Command::Synth(a) => ("synth", cmd_synth(a, config)?),
        Command::Ttest(a) => ("ttest", cmd_ttest(a, config)?),
    };
    let Run {
        mut manifest_body,
        default_path,
    } = m;
    manifest_body.command = name.to_string();
    match manifest.or(default_path) {
        Some(path) => manifest_body.write(&path),
        None => Ok(()),
    }
}

/// What a command produced, before the manifest is written.
pub(crate) struct Run {
    manifest_body: Manifest,
    default_path: Option<PathBuf>,
}

impl Run {
    fn new(
        config: &RunConfig,
        inputs: &[&Path],
        outputs: Vec<PathBuf>,
        default_path: Option<PathBuf>,
    ) -> Run {
        let mut m = Manifest::new("", config);
        m.inputs = inputs.iter().map(|p| p.to_path_buf()).collect();
        m.outputs = outputs;
        Run {
            manifest_body: m,
            default_path,
        }
    }
}

fn read_conll(path: &Path, typeset: &TypeSet) -> CliResult<Dataset> {
    parse_conll(&read_input(path)?, typeset)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_tagger(path: &Path) -> CliResult<Tagger> {
    Tagger::from_bytes(&read_input_bytes(path)?)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_lm(path: &Path) -> CliResult<KnModel> {
    KnModel::from_bytes(&read_input_bytes(path)?)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn cmd_train(a: crate::TrainArgs, config: &RunConfig) -> CliResult<Run> {
    let typeset = config.typeset()?;
    let data = read_conll(&a.train, &typeset)?;
    let dev = a
        .dev
        .as_deref()
        .map(|p| read_conll(p, &typeset))
        .transpose()?;
    let log_path = a.log.unwrap_or_else(|| sidecar(&a.out, "log.jsonl"));
    check_output(&a.out)?;
    check_output(&log_path)?;

    let mut log = String::new();
    let tagger = train(&data, &config.tagger, dev.as_ref(), &mut |e| {
        log.push_str(&serde_json::to_string(e).expect("epoch log serializes"));
        log.push('\n');
        log::info!(
            "epoch {} loss_true {:.5} loss_noisy {:.5}",
            e.epoch,
            e.loss_true,
            e.loss_noisy
        );
    })?;
    write_output(&a.out, &tagger.to_bytes()?)?;
    write_output(&log_path, log.as_bytes())?;

    let mut inputs = vec![a.train.as_path()];
    inputs.extend(a.dev.as_deref());
    let manifest = sidecar(&a.out, "manifest.json");
    Ok(Run::new(
        config,
        &inputs,
        vec![a.out.clone(), log_path],
        Some(manifest),
    ))
}

fn cmd_eval(a: crate::EvalArgs, config: &RunConfig) -> CliResult<Run> {
    let tagger = load_tagger(&a.model)?;
    let metadata = RunMetadata {
        seed: tagger.config.seed,
        config_hash: stable_hash(serde_json::to_string(&tagger.config)?.as_bytes()),
    };
    let mut reports = BTreeMap::new();
    for path in &a.inputs {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let gold = read_conll(path, &tagger.typeset)?;
        let report = EvalReport::build(&gold, &tagger.predict_dataset(&gold), metadata.clone())?;
        if reports.insert(name.clone(), report).is_some() {
            return Err(Failure::Usage(format!(
                "two evaluation files are named {name}"
            )));
        }
    }
    let tsv_path = a.tsv.unwrap_or_else(|| a.report.with_extension("tsv"));
    let mut tsv = format!("{}\n", EvalReport::tsv_header());
    for (name, r) in &reports {
        tsv.push_str(&r.tsv_row(name));
        tsv.push('\n');
    }
    let mut text = serde_json::to_string_pretty(&reports)?;
    text.push('\n');
    write_output(&a.report, text.as_bytes())?;
    write_output(&tsv_path, tsv.as_bytes())?;
    for (name, r) in &reports {
        println!("{name}: F1 {:.2}", 100.0 * r.overall.f1);
    }

    let mut inputs = vec![a.model.as_path()];
    inputs.extend(a.inputs.iter().map(PathBuf::as_path));
    let manifest = sidecar(&a.report, "manifest.json");
    Ok(Run::new(
        config,
        &inputs,
        vec![a.report.clone(), tsv_path],
        Some(manifest),
    ))
}

fn cmd_predict(a: crate::PredictArgs, config: &RunConfig) -> CliResult<Run> {
    let tagger = load_tagger(&a.model)?;
    let data = read_conll(&a.input, &tagger.typeset)?;
    let tagged = data
        .sentences()
        .iter()
        .map(|s| s.relabel(tagger.predict(s)))
        .collect::<contextbias::Result<Vec<Sentence>>>()?;
    let out = Dataset::new(tagged, tagger.typeset.clone())?;
    write_output(&a.out, to_conll(&out).as_bytes())?;
    let manifest = sidecar(&a.out, "manifest.json");
    Ok(Run::new(
        config,
        &[&a.model, &a.input],
        vec![a.out.clone()],
        Some(manifest),
    ))
}

fn cmd_lm_train(a: crate::LmTrainArgs, config: &RunConfig) -> CliResult<Run> {
    let stream: Vec<Vec<String>> = if a.conll {
        abstract_entities(&read_conll(&a.input, &config.typeset()?)?)
    } else {
        read_input(&a.input)?
            .lines()
            .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .filter(|s| !s.is_empty())
            .collect()
    };
    check_output(&a.out)?;
    let model = train_kn(&stream, &config.lm)?;
    write_output(&a.out, &model.to_bytes())?;
    let mut outputs = vec![a.out.clone()];
    if let Some(dump) = a.dump {
        write_output(&dump, model.dump_text().as_bytes())?;
        outputs.push(dump);
    }
    let manifest = sidecar(&a.out, "manifest.json");
    Ok(Run::new(config, &[&a.input], outputs, Some(manifest)))
}

fn cmd_lm_tag(a: crate::LmTagArgs, config: &RunConfig) -> CliResult<Run> {
    let model = load_lm(&a.model)?;
    let typeset = config.typeset()?;
    let data = read_conll(&a.input, &typeset)?;
    let mut out = String::new();
    for (i, s) in data.sentences().iter().enumerate() {
        let tokens: Vec<&str> = s.surfaces().collect();
        for m in s.mentions() {
            let dist = tag_slot(&model, &tokens, (m.start, m.end), &typeset)?;
            let line = json!({
                "sentence": i,
                "span": [m.start, m.end],
                "surface": m.surface,
                "gold_type": typeset.name(m.type_id),
                "context_type": dist.top_type(),
                "gap": dist.gap(),
                "distribution": dist,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
    }
    write_output(&a.out, out.as_bytes())?;
    let manifest = sidecar(&a.out, "manifest.json");
    Ok(Run::new(
        config,
        &[&a.model, &a.input],
        vec![a.out.clone()],
        Some(manifest),
    ))
}

fn cmd_select(a: crate::SelectArgs, config: &RunConfig, wts: bool) -> CliResult<Run> {
    let typeset = config.typeset()?;
    let candidates = read_candidates(&read_input(&a.candidates)?)
        .map_err(|e| Failure::Data(format!("{}: {e}", a.candidates.display())))?;
    let model = load_lm(&a.lm)?;
    let opts = SelectionOptions {
        single_token_only: !a.any_span,
    };
    let selected = if wts {
        select_wts(&candidates, &model, &typeset, &config.thresholds, opts)?
    } else {
        select_nrb(&candidates, &model, &typeset, &config.thresholds, opts)?
    };
    let selected_path = a.selected.unwrap_or_else(|| sidecar(&a.out, "jsonl"));
    let dataset = candidates_to_dataset(&selected, &typeset)?;
    write_output(&a.out, to_conll(&dataset).as_bytes())?;
    write_output(&selected_path, write_candidates(&selected)?.as_bytes())?;
    eprintln!(
        "selected {} of {} candidates",
        selected.len(),
        candidates.len()
    );
    let manifest = sidecar(&a.out, "manifest.json");
    Ok(Run::new(
        config,
        &[&a.candidates, &a.lm],
        vec![a.out.clone(), selected_path],
        Some(manifest),
    ))
}

fn cmd_augment(a: crate::AugmentArgs, config: &RunConfig) -> CliResult<Run> {
    if !a.mask {
        return Err(Failure::Usage("augment needs --mask".into()));
    }
    let data = read_conll(&a.input, &config.typeset()?)?;
    write_output(&a.out, to_conll(&mask_augment(&data)).as_bytes())?;
    let manifest = sidecar(&a.out, "manifest.json");
    Ok(Run::new(
        config,
        &[&a.input],
        vec![a.out.clone()],
        Some(manifest),
    ))
}

fn seeded(config: &RunConfig, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.unwrap_or(0));
    rng.set_stream(stream);
    rng
}

fn cmd_permute(a: crate::InOutArgs, config: &RunConfig) -> CliResult<Run> {
    let data = read_conll(&a.input, &config.typeset()?)?;
    let permuted = permute_mentions(&data, &mut seeded(config, 0));
    write_output(&a.out, to_conll(&permuted).as_bytes())?;
    let manifest = sidecar(&a.out, "manifest.json");
    Ok(Run::new(
        config,
        &[&a.input],
        vec![a.out.clone()],
        Some(manifest),
    ))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Data(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_lowres(a: crate::LowresArgs, config: &RunConfig) -> CliResult<Run> {
    let data = read_conll(&a.input, &config.typeset()?)?;
    create_dir(&a.out_dir)?;
    let mut outputs = Vec::new();
    for &k in &config.lowres_ks {
        let subset = lowres_sample(&data, k, &mut seeded(config, k as u64))?;
        let path = a.out_dir.join(format!("train_k{k}.conll"));
        write_output(&path, to_conll(&subset).as_bytes())?;
        outputs.push(path);
    }
    let manifest = a.out_dir.join("lowres.manifest.json");
    Ok(Run::new(config, &[&a.input], outputs, Some(manifest)))
}

fn cmd_synth(a: crate::SynthArgs, config: &RunConfig) -> CliResult<Run> {
    let bench = gen_synthetic_bias(&config.synth, &mut seeded(config, 0))
        .map_err(|e| Failure::Usage(e.to_string()))?;
    create_dir(&a.out_dir)?;
    let mut outputs = Vec::new();
    for (name, data) in [
        ("train", &bench.train),
        ("test", &bench.test),
        ("challenge", &bench.challenge),
    ] {
        let path = a.out_dir.join(format!("{name}.conll"));
        write_output(&path, to_conll(data).as_bytes())?;
        outputs.push(path);
    }
    let pools = a.out_dir.join("pools.json");
    let mut text = serde_json::to_string_pretty(&bench.pools)?;
    text.push('\n');
    write_output(&pools, text.as_bytes())?;
    outputs.push(pools);
    let manifest = a.out_dir.join("synth.manifest.json");
    Ok(Run::new(config, &[], outputs, Some(manifest)))
}

fn read_scores(path: &Path) -> CliResult<Vec<f64>> {
    read_input(path)?
        .split_whitespace()
        .map(|w| {
            w.parse::<f64>()
                .map_err(|_| Failure::Data(format!("{}: `{w}` is not a number", path.display())))
        })
        .collect()
}

fn cmd_ttest(a: crate::TtestArgs, config: &RunConfig) -> CliResult<Run> {
    let result = paired_t_test(&read_scores(&a.a)?, &read_scores(&a.b)?)?;
    let text = format!("{}\n", serde_json::to_string(&result)?);
    print!("{text}");
    let mut outputs = Vec::new();
    if let Some(out) = &a.out {
        write_output(out, text.as_bytes())?;
        outputs.push(out.clone());
    }
    let manifest = a.out.as_deref().map(|o| sidecar(o, "manifest.json"));
    Ok(Run::new(config, &[&a.a, &a.b], outputs, manifest))
}
