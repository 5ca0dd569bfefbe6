//! Run configuration, failure classes and run manifests.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use contextbias::benchgen::{SelectionThresholds, SyntheticSpec};
use contextbias::corpus::TypeSet;
use contextbias::evalkit::stable_hash;
use contextbias::lm::KnConfig;
use contextbias::tagger::TaggerConfig;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "CONTEXTBIAS_SEED";

/// Training-set sizes of the low-resource sweep.
pub const DEFAULT_LOWRES_KS: [usize; 4] = [100, 500, 1000, 2000];

/// A failed run: usage errors exit with 1, data errors with 2.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<contextbias::Error> for Failure {
    fn from(e: contextbias::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Everything a run depends on besides its input files. Read from a JSON
/// config file, then overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: usize,
    pub types: Vec<String>,
    pub tagger: TaggerConfig,
    pub lm: KnConfig,
    pub thresholds: SelectionThresholds,
    pub synth: SyntheticSpec,
    pub lowres_ks: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            threads: 1,
            types: vec!["PER".into(), "LOC".into(), "ORG".into()],
            tagger: TaggerConfig::default(),
            lm: KnConfig::default(),
            thresholds: SelectionThresholds::default(),
            synth: SyntheticSpec::default(),
            lowres_ks: DEFAULT_LOWRES_KS.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = read_input(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
    }

    /// Flag, then config file, then `CONTEXTBIAS_SEED`, then 0.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> CliResult<u64> {
        let seed = match flag.or(self.seed) {
            Some(s) => s,
            None => match std::env::var(SEED_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| Failure::Usage(format!("{SEED_ENV}={v} is not a seed")))?,
                Err(_) => 0,
            },
        };
        self.seed = Some(seed);
        self.tagger.seed = seed;
        Ok(seed)
    }

    pub fn typeset(&self) -> CliResult<TypeSet> {
        TypeSet::new(&self.types).map_err(|e| Failure::Usage(e.to_string()))
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |e: contextbias::Error| Failure::Usage(e.to_string());
        if self.threads == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        self.typeset()?;
        self.tagger.validate().map_err(usage)?;
        self.thresholds.validate().map_err(usage)?;
        if self.lm.order < 2 {
            return Err(Failure::Usage("LM order must be at least 2".into()));
        }
        if self.lowres_ks.contains(&0) {
            return Err(Failure::Usage("low-resource sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        stable_hash(self.to_json().as_bytes())
    }
}

/// Written next to every run's outputs; together with the inputs it fully
/// determines them.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Manifest {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed: config.seed.unwrap_or(0),
            config_hash: config.hash(),
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_output(path, text.as_bytes())
    }
}

pub fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))
}

pub fn read_input_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))
}

/// Fails unless the parent directory of `path` exists.
pub fn check_output(path: &Path) -> CliResult<()> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if parent.is_dir() {
        Ok(())
    } else {
        Err(Failure::Data(format!(
            "output directory {} does not exist",
            parent.display()
        )))
    }
}

pub fn write_output(path: &Path, bytes: &[u8]) -> CliResult<()> {
    check_output(path)?;
    fs::write(path, bytes)
        .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

/// `<path>.<suffix>`, keeping the original extension.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
