//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments start with '#'
//! corpus = data/counterfact.jsonl
//! k = 32
//! mock_rules = rules.jsonl
//! alpha = 1.0, 1.1
//! ```
//!
//! Relative paths resolve against the config file's directory. Command-line
//! overrides are applied as additional pairs on top of the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::demo::{Kind, LengthMode, DEFAULT_BUDGET};
use crate::error::RunError;
use crate::lm::{Normalization, TransportConfig, DEFAULT_FLOOR};
use crate::metrics::Pooling;

pub const CACHE_DIR_ENV: &str = "IKE_CACHE_DIR";

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSource {
    File(PathBuf),
    Endpoint(String),
    Stub { dimension: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Remote(String),
    Mock { rules: PathBuf, floor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    RandomSelection,
    RandomOrdering,
    DropCopy,
    DropUpdate,
    DropRetain,
    PromptBaseline,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::RandomSelection => "random_selection",
            Ablation::RandomOrdering => "random_ordering",
            Ablation::DropCopy => "drop_copy",
            Ablation::DropUpdate => "drop_update",
            Ablation::DropRetain => "drop_retain",
            Ablation::PromptBaseline => "prompt_baseline",
        }
    }

    /// Kinds kept in the allocation under this ablation.
    pub fn kinds(ablation: Option<Ablation>) -> Vec<Kind> {
        let dropped = match ablation {
            Some(Ablation::DropCopy) => Some(Kind::Copy),
            Some(Ablation::DropUpdate) => Some(Kind::Update),
            Some(Ablation::DropRetain) => Some(Kind::Retain),
            _ => None,
        };
        Kind::ALL.into_iter().filter(|k| Some(*k) != dropped).collect()
    }
}

impl FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "random_selection" => Self::RandomSelection,
            "random_ordering" => Self::RandomOrdering,
            "drop_copy" | "no_copy" => Self::DropCopy,
            "drop_update" | "no_update" => Self::DropUpdate,
            "drop_retain" | "no_retain" => Self::DropRetain,
            "prompt_baseline" | "prompt" => Self::PromptBaseline,
            other => return Err(format!("unknown ablation `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub templama: Option<PathBuf>,
    pub test_size: usize,
    pub embedding: EmbeddingSource,
    pub k: usize,
    pub backend: BackendSpec,
    pub budget: usize,
    pub length_mode: LengthMode,
    pub seed: u64,
    pub normalization: Normalization,
    pub pooling: Pooling,
    pub cka_m: usize,
    pub alphas: Vec<f64>,
    pub ablation: Option<Ablation>,
    pub strict: bool,
    pub out: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub dump_contexts: bool,
    pub workers: usize,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub token_env: String,
}

const KEYS: &[&str] = &[
    "corpus",
    "templama",
    "test_size",
    "embeddings",
    "embedding_url",
    "stub_dimension",
    "stub_seed",
    "k",
    "backend_url",
    "mock_rules",
    "mock_floor",
    "budget",
    "length_mode",
    "seed",
    "normalization",
    "pooling",
    "cka_m",
    "alpha",
    "ablation",
    "strict",
    "out",
    "cache_dir",
    "dump_contexts",
    "workers",
    "timeout_secs",
    "max_in_flight",
    "token_env",
];

const PATH_KEYS: &[&str] = &["corpus", "templama", "embeddings", "mock_rules", "out", "cache_dir"];

/// Keys that only affect where or how fast outputs are produced.
const NON_SEMANTIC: &[&str] = &["out", "cache_dir", "dump_contexts", "workers", "strict"];

/// Raw key-value pairs with path values already resolved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigPairs(BTreeMap<String, String>);

impl ConfigPairs {
    pub fn parse(text: &str, base: &Path) -> Result<Self, RunError> {
        let mut pairs = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| RunError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            pairs.set_relative(k.trim(), v.trim(), base)?;
        }
        Ok(pairs)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Sets a value as given on the command line (paths relative to the
    /// working directory).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), RunError> {
        self.set_relative(key, value, Path::new(""))
    }

    fn set_relative(&mut self, key: &str, value: &str, base: &Path) -> Result<(), RunError> {
        if !KEYS.contains(&key) {
            return Err(RunError::Config(format!("unknown key `{key}`")));
        }
        let value = if PATH_KEYS.contains(&key) && !value.is_empty() {
            base.join(value).to_string_lossy().into_owned()
        } else {
            value.to_string()
        };
        self.0.insert(key.to_string(), value);
        Ok(())
    }

    pub fn remove(&mut self, key: &str) {
        self.0.remove(key);
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    fn parsed<T: FromStr>(&self, key: &str, default: T) -> Result<T, RunError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| RunError::Config(format!("`{key}` = `{v}`: {e}"))),
        }
    }
}

impl RunConfig {
    pub fn from_pairs(pairs: &ConfigPairs) -> Result<Self, RunError> {
        let seed: u64 = pairs.parsed("seed", 0)?;
        let embedding = match (
            pairs.get("embeddings"),
            pairs.get("embedding_url"),
            pairs.get("stub_dimension"),
        ) {
            (Some(p), None, None) => EmbeddingSource::File(p.into()),
            (None, Some(u), None) => EmbeddingSource::Endpoint(u.to_string()),
            (None, None, _) => EmbeddingSource::Stub {
                dimension: pairs.parsed("stub_dimension", 64)?,
                seed: pairs.parsed("stub_seed", seed)?,
            },
            _ => {
                return Err(RunError::Config(
                    "exactly one of `embeddings`, `embedding_url`, `stub_dimension` may be set".into(),
                ))
            }
        };
        if let EmbeddingSource::Stub { dimension: 0, .. } = embedding {
            return Err(RunError::Config("`stub_dimension` must be positive".into()));
        }
        let backend = match (pairs.get("backend_url"), pairs.get("mock_rules")) {
            (Some(u), None) => BackendSpec::Remote(u.to_string()),
            (None, Some(r)) => BackendSpec::Mock {
                rules: r.into(),
                floor: pairs.parsed("mock_floor", DEFAULT_FLOOR)?,
            },
            (None, None) => {
                return Err(RunError::Config(
                    "no backend: set `backend_url` or `mock_rules`".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(RunError::Config(
                    "`backend_url` and `mock_rules` are mutually exclusive".into(),
                ))
            }
        };
        let ablations: Vec<Ablation> = match pairs.get("ablation") {
            None | Some("none") => vec![],
            Some(list) => list
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.parse().map_err(RunError::Config))
                .collect::<Result<_, _>>()?,
        };
        if ablations.len() > 1 {
            return Err(RunError::Config(format!(
                "conflicting ablation switches: {}",
                ablations.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(", ")
            )));
        }
        let mut ablation = ablations.first().copied();
        let mut k: usize = pairs.parsed("k", 32)?;
        match ablation {
            Some(Ablation::PromptBaseline) => k = 0,
            Some(other) if k == 0 => {
                return Err(RunError::Config(format!(
                    "k = 0 is the prompt baseline and conflicts with `{}`",
                    other.as_str()
                )))
            }
            None if k == 0 => ablation = Some(Ablation::PromptBaseline),
            _ => {}
        }
        let alphas: Vec<f64> = match pairs.get("alpha") {
            None => vec![1.0, 1.1],
            Some(list) => list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| RunError::Config(format!("`alpha`: {e}")))
                })
                .collect::<Result<_, _>>()?,
        };
        let cache_dir = pairs
            .get("cache_dir")
            .map(PathBuf::from)
            .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from));
        let config = Self {
            corpus: pairs.get("corpus").map(PathBuf::from),
            templama: pairs.get("templama").map(PathBuf::from),
            test_size: pairs.parsed("test_size", crate::corpus::TEST_SPLIT_SIZE)?,
            embedding,
            k,
            backend,
            budget: pairs.parsed("budget", DEFAULT_BUDGET)?,
            length_mode: match pairs.get("length_mode") {
                None | Some("chars") => LengthMode::Chars,
                Some("words") => LengthMode::Words,
                Some(other) => {
                    return Err(RunError::Config(format!("unknown length_mode `{other}`")))
                }
            },
            seed,
            normalization: pairs.parsed("normalization", Normalization::None)?,
            pooling: pairs.parsed("pooling", Pooling::Flat)?,
            cka_m: pairs.parsed("cka_m", 5)?,
            alphas,
            ablation,
            strict: pairs.parsed("strict", false)?,
            out: pairs.get("out").unwrap_or("ike-out").into(),
            cache_dir,
            dump_contexts: pairs.parsed("dump_contexts", false)?,
            workers: pairs.parsed("workers", 4)?,
            timeout_secs: pairs.parsed("timeout_secs", 60)?,
            max_in_flight: pairs.parsed("max_in_flight", 4)?,
            token_env: pairs
                .get("token_env")
                .unwrap_or(crate::lm::remote::DEFAULT_TOKEN_ENV)
                .to_string(),
        };
        if config.budget == 0 {
            return Err(RunError::Config("`budget` must be positive".into()));
        }
        if config.cka_m == 0 {
            return Err(RunError::Config("`cka_m` must be positive".into()));
        }
        Ok(config)
    }

    pub fn transport(&self, url: &str) -> TransportConfig {
        TransportConfig {
            timeout: Duration::from_secs(self.timeout_secs),
            max_in_flight: self.max_in_flight,
            token_env: self.token_env.clone(),
            ..TransportConfig::new(url)
        }
    }

    /// Fully resolved configuration as `key = value` lines in fixed order.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("corpus", path(&self.corpus));
        line("templama", path(&self.templama));
        line("test_size", self.test_size.to_string());
        match &self.embedding {
            EmbeddingSource::File(p) => line("embeddings", p.display().to_string()),
            EmbeddingSource::Endpoint(u) => line("embedding_url", u.clone()),
            EmbeddingSource::Stub { dimension, seed } => {
                line("stub_dimension", dimension.to_string());
                line("stub_seed", seed.to_string());
            }
        }
        line("k", self.k.to_string());
        match &self.backend {
            BackendSpec::Remote(u) => line("backend_url", u.clone()),
            BackendSpec::Mock { rules, floor } => {
                line("mock_rules", rules.display().to_string());
                line("mock_floor", floor.to_string());
            }
        }
        line("budget", self.budget.to_string());
        line(
            "length_mode",
            match self.length_mode {
                LengthMode::Chars => "chars",
                LengthMode::Words => "words",
            }
            .into(),
        );
        line("seed", self.seed.to_string());
        line("normalization", self.normalization.as_str().into());
        line("pooling", self.pooling.as_str().into());
        line("cka_m", self.cka_m.to_string());
        line(
            "alpha",
            self.alphas.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(","),
        );
        line(
            "ablation",
            self.ablation.map_or("none", Ablation::as_str).into(),
        );
        line("strict", self.strict.to_string());
        line("out", self.out.display().to_string());
        line("cache_dir", path(&self.cache_dir));
        line("dump_contexts", self.dump_contexts.to_string());
        line("workers", self.workers.to_string());
        line("timeout_secs", self.timeout_secs.to_string());
        line("max_in_flight", self.max_in_flight.to_string());
        line("token_env", self.token_env.clone());
        s
    }

    /// SHA-256 over the result-affecting part of [`render`](Self::render).
    pub fn hash(&self) -> String {
        let semantic: String = self
            .render()
            .lines()
            .filter(|l| {
                let key = l.split(" = ").next().unwrap_or("");
                !NON_SEMANTIC.contains(&key)
            })
            .map(|l| format!("{l}\n"))
            .collect();
        hex::encode(Sha256::digest(semantic.as_bytes()))
    }
}
