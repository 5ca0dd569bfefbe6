//! The `contextbias` command line.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::{CliResult, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "contextbias",
    version,
    about = "Name-regularity bias toolkit for NER"
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; falls back to the config file, then CONTEXTBIAS_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Comma-separated entity types.
    #[arg(long, global = true, value_delimiter = ',')]
    types: Option<Vec<String>>,
    /// Manifest path; defaults to a file next to the main output.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a tagger on a CoNLL file.
    Train(TrainArgs),
    /// Score a tagger on one or more CoNLL files.
    Eval(EvalArgs),
    /// Tag a CoNLL file with a trained tagger.
    Predict(PredictArgs),
    /// Train a Kneser-Ney model on entity-abstracted sentences.
    LmTrain(LmTrainArgs),
    /// Type every mention of a CoNLL file from its context alone.
    LmTag(LmTagArgs),
    /// Select the name-regularity bias set from candidates.
    BuildNrb(SelectArgs),
    /// Select the witness control set from candidates.
    BuildWts(SelectArgs),
    /// Extend a CoNLL file with entity-masked copies.
    Augment(AugmentArgs),
    /// Shuffle mention surfaces across slots.
    Permute(InOutArgs),
    /// Draw low-resource training subsets.
    Lowres(LowresArgs),
    /// Generate the synthetic name-regularity benchmark.
    Synth(SynthArgs),
    /// Paired t-test on two score files.
    Ttest(TtestArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value = "data/train.conll")]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long, default_value = "model.bin")]
    out: PathBuf,
    /// JSONL training log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    adv: bool,
    #[arg(long)]
    mask: bool,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    freeze_embeddings: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, default_value = "model.bin")]
    model: PathBuf,
    /// Evaluation files, each reported under its file stem.
    #[arg(long = "in", default_values = ["data/test.conll", "data/challenge.conll"])]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
    /// TSV summary; defaults to the report path with a `.tsv` extension.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long, default_value = "model.bin")]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LmTrainArgs {
    /// One sentence per line, whitespace-tokenized, mentions already abstracted.
    #[arg(long = "in")]
    input: PathBuf,
    /// Treat the input as CoNLL and abstract its mentions first.
    #[arg(long)]
    conll: bool,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Also write a plain-text dump of the model.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LmTagArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// JSONL output, one line per mention.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    lm: PathBuf,
    /// Weak confidence floor, NRB gap floor, WTS gap ceiling.
    #[arg(long)]
    thresholds: Option<String>,
    /// Keep multi-token and lowercase query terms.
    #[arg(long)]
    any_span: bool,
    /// Selected sentences in CoNLL format.
    #[arg(long)]
    out: PathBuf,
    /// Selected candidates as JSONL; defaults to `<out>.jsonl`.
    #[arg(long)]
    selected: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    /// Append entity-masked copies.
    #[arg(long)]
    mask: bool,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InOutArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LowresArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Subset sizes; defaults to the configured sweep.
    #[arg(long = "k", value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Receives `train_k<k>.conll` per size.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value = "data")]
    out_dir: PathBuf,
    #[arg(long)]
    names_per_type: Option<usize>,
    #[arg(long)]
    templates_per_type: Option<usize>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    challenge_size: Option<usize>,
    #[arg(long)]
    leak_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct TtestArgs {
    /// Whitespace-separated scores of the first system.
    a: PathBuf,
    /// Scores of the second system, paired by position.
    b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads {
        config.threads = t;
    }
    if let Some(types) = cli.types {
        config.types = types;
    }
    config.resolve_seed(cli.seed)?;
    apply_overrides(&cli.command, &mut config)?;
    config.validate()?;
    commands::dispatch(cli.command, &config, cli.manifest)
}

fn apply_overrides(command: &Command, c: &mut RunConfig) -> CliResult<()> {
    match command {
        Command::Train(a) => {
            let t = &mut c.tagger;
            t.use_adv |= a.adv;
            t.use_mask |= a.mask;
            t.freeze_embeddings |= a.freeze_embeddings;
            set(&mut t.lambda, a.lambda);
            set(&mut t.epochs, a.epochs);
            set(&mut t.learning_rate, a.lr);
            set(&mut t.lr_decay, a.lr_decay);
            set(&mut t.embed_dim, a.embed_dim);
            set(&mut t.hidden, a.hidden);
            set(&mut t.window, a.window);
            set(&mut t.batch_size, a.batch_size);
            set(&mut t.init_scale, a.init_scale);
        }
        Command::LmTrain(a) => set(&mut c.lm.order, a.order),
        Command::BuildNrb(a) | Command::BuildWts(a) => {
            if let Some(s) = &a.thresholds {
                c.thresholds = contextbias::benchgen::SelectionThresholds::parse(s)
                    .map_err(|e| config::Failure::Usage(e.to_string()))?;
            }
        }
        Command::Lowres(a) => {
            if let Some(ks) = &a.ks {
                c.lowres_ks = ks.clone();
            }
        }
        Command::Synth(a) => {
            let s = &mut c.synth;
            set(&mut s.names_per_type, a.names_per_type);
            set(&mut s.templates_per_type, a.templates_per_type);
            set(&mut s.train_size, a.train_size);
            set(&mut s.test_size, a.test_size);
            set(&mut s.challenge_size, a.challenge_size);
            set(&mut s.leak_rate, a.leak_rate);
        }
        _ => {}
    }
    Ok(())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
