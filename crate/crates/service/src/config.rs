//! TOML run configuration shared by every subcommand.
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use quandary::backends::policy::{LinearValue, SoftmaxPolicy, Vocab};
use quandary::backends::DecodingParams;
use quandary::defeasibility::DEFAULT_SAMPLES_PER_TYPE;
use quandary::eval::Smoothing;
use quandary::pipelines::DEFAULT_WH_STARTS;
use quandary::ppo::PpoConfig;
use quandary::session::DEFAULT_TURN_LIMIT;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Backend used when `--backend` is not given.
    pub backend: Option<String>,
    pub backends: BTreeMap<String, BackendConfig>,
    pub decoding: DecodingParams,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    pub policy: PolicyConfig,
    pub data: DataConfig,
    pub rank: RankConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Scripted tables loaded from JSONL files. Missing tables fall back to
    /// the offline backend (generators, judge) or are disabled (fusion, NLI).
    Fixture {
        questions: Option<PathBuf>,
        answers: Option<PathBuf>,
        fusion: Option<PathBuf>,
        judge: Option<PathBuf>,
        nli: Option<PathBuf>,
        relevance: Option<PathBuf>,
    },
    Remote {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default = "yes")]
        fusion: bool,
        #[serde(default = "yes")]
        nli: bool,
    },
    /// Every call fails as unavailable.
    Offline,
}

fn default_timeout() -> u64 {
    30
}

fn yes() -> bool {
    true
}

impl BackendConfig {
    pub fn timeout(&self) -> Option<Duration> {
        match self {
            BackendConfig::Remote { timeout_secs, .. } => Some(Duration::from_secs(*timeout_secs)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub samples_per_type: usize,
    pub nli_filter: bool,
    /// Precomputed reward statistics (`estimate-stats` output).
    pub stats: Option<PathBuf>,
    /// JSONL reward cache, read if present and written after training.
    pub cache: Option<PathBuf>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            samples_per_type: DEFAULT_SAMPLES_PER_TYPE,
            nli_filter: true,
            stats: None,
            cache: None,
        }
    }
}

/// Shape of the token-level question policy trained by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub tokens: Vec<String>,
    pub eos: String,
    pub buckets: usize,
    pub positions: usize,
    /// Initial logit bias per token.
    pub bias: BTreeMap<String, f64>,
    /// A trained checkpoint directory. When set, it replaces the backend's
    /// question generator everywhere.
    pub checkpoint: Option<PathBuf>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            tokens: ["<eos>", "what", "why", "how", "did", "you", "do", "who"]
                .map(String::from)
                .to_vec(),
            eos: "<eos>".into(),
            buckets: 4,
            positions: 8,
            bias: BTreeMap::new(),
            checkpoint: None,
        }
    }
}

impl PolicyConfig {
    pub fn build(&self) -> Result<(SoftmaxPolicy, LinearValue)> {
        let vocab = Vocab::new(self.tokens.iter().cloned(), &self.eos)?;
        let n = vocab.len();
        let mut policy = SoftmaxPolicy::new(vocab, self.buckets);
        for (token, b) in &self.bias {
            let Some(id) = quandary::backends::policy::Policy::vocab(&policy).id(token) else {
                bail!("bias for unknown token {token:?}");
            };
            policy.set_bias(id, *b);
        }
        Ok((policy, LinearValue::new(n, self.positions, self.buckets)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Plain text, one situation per line.
    pub situations: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub silver: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    pub starts: Vec<String>,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            starts: DEFAULT_WH_STARTS.map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// JSONL of `{situation, question, references}`.
    pub questions: Option<PathBuf>,
    /// JSONL of `{candidate, references}` for update-generation scores.
    pub updates: Option<PathBuf>,
    pub smoothing: Smoothing,
    /// Also simulate answers and report divergence and flips.
    pub divergence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    pub turn_limit: usize,
    /// JSONL file that receives completed sessions.
    pub persist: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8000".into(),
            turn_limit: DEFAULT_TURN_LIMIT,
            persist: None,
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.decoding.validate()?;
        self.ppo.validate()?;
        if self.reward.samples_per_type == 0 {
            bail!("reward.samples_per_type must be >= 1");
        }
        if self.serve.turn_limit == 0 {
            bail!("serve.turn_limit must be >= 1");
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// `--backend` if given, then the config default, then the only entry.
    pub fn backend_name(&self, requested: Option<&str>) -> Result<String> {
        if let Some(name) = requested.or(self.backend.as_deref()) {
            if !self.backends.contains_key(name) && name != "offline" {
                bail!("no backend named {name:?} in config");
            }
            return Ok(name.to_string());
        }
        match self.backends.keys().collect::<Vec<_>>().as_slice() {
            [only] => Ok((*only).clone()),
            [] => Ok("offline".into()),
            _ => bail!("several backends configured; choose one with --backend"),
        }
    }

    /// Hex SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
