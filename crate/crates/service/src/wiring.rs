//! Turns a [`Config`] into concrete backends and engines.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use quandary::backends::fixture::{Offline, ScriptedGenerator, ScriptedJudge, SpanQa, TableNli, TableRelevance, TokenF1Similarity};
use quandary::backends::policy::{PolicyGenerator, SoftmaxPolicy};
use quandary::backends::remote::RemoteBackend;
use quandary::backends::{JudgmentOracle, NliClassifier, QaModel, RelevanceScorer, SimilarityScorer, TextGenerator};
use quandary::data;
use quandary::defeasibility::{RewardCache, RewardEngine};
use quandary::ppo::Checkpoint;
use quandary::session::{InteractiveJudge, SessionManager};
use quandary::Situation;

use crate::config::{BackendConfig, Config};

/// Every model role, resolved for one named backend.
#[derive(Clone)]
pub struct Backends {
    pub name: String,
    /// Short descriptions of each role's source, for report provenance.
    pub ids: Vec<String>,
    pub questions: Arc<dyn TextGenerator>,
    pub answers: Arc<dyn TextGenerator>,
    pub fusion: Option<Arc<dyn TextGenerator>>,
    pub judge: Arc<dyn JudgmentOracle>,
    pub nli: Option<Arc<dyn NliClassifier>>,
    pub qa: Arc<dyn QaModel>,
    pub similarity: Arc<dyn SimilarityScorer>,
    pub relevance: Arc<dyn RelevanceScorer>,
}

impl Backends {
    pub fn offline(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ids: vec![format!("{name}:offline")],
            questions: Arc::new(Offline),
            answers: Arc::new(Offline),
            fusion: None,
            judge: Arc::new(Offline),
            nli: None,
            qa: Arc::new(Offline),
            similarity: Arc::new(Offline),
            relevance: Arc::new(Offline),
        }
    }

    pub fn from_config(cfg: &Config, requested: Option<&str>) -> Result<Self> {
        let name = cfg.backend_name(requested)?;
        let mut b = match cfg.backends.get(&name) {
            None | Some(BackendConfig::Offline) => Self::offline(&name),
            Some(BackendConfig::Remote { url, fusion, nli, .. }) => {
                let timeout = cfg.backends[&name].timeout().expect("remote has a timeout");
                let r = Arc::new(RemoteBackend::with_timeout(url.clone(), timeout));
                Self {
                    name: name.clone(),
                    ids: vec![format!("{name}:remote:{url}")],
                    questions: r.clone(),
                    answers: r.clone(),
                    fusion: fusion.then(|| r.clone() as Arc<dyn TextGenerator>),
                    judge: r.clone(),
                    nli: nli.then(|| r.clone() as Arc<dyn NliClassifier>),
                    qa: r.clone(),
                    similarity: r.clone(),
                    relevance: r,
                }
            }
            Some(BackendConfig::Fixture {
                questions,
                answers,
                fusion,
                judge,
                nli,
                relevance,
            }) => {
                let mut ids = Vec::new();
                let mut table = |role: &str, p: &Option<std::path::PathBuf>| {
                    let p = p.as_ref().map(|p| cfg.resolve(p));
                    ids.push(match &p {
                        Some(p) => format!("{name}:{role}:{}", p.display()),
                        None => format!("{name}:{role}:none"),
                    });
                    p
                };
                let generator = |p: Option<std::path::PathBuf>| -> Result<Option<Arc<dyn TextGenerator>>> {
                    Ok(match p {
                        Some(p) => Some(Arc::new(ScriptedGenerator::load(&p).with_context(|| format!("loading {}", p.display()))?)),
                        None => None,
                    })
                };
                let q = generator(table("questions", questions))?;
                let a = generator(table("answers", answers))?;
                let f = generator(table("fusion", fusion))?;
                let j: Arc<dyn JudgmentOracle> = match table("judge", judge) {
                    Some(p) => Arc::new(ScriptedJudge::load(&p).with_context(|| format!("loading {}", p.display()))?),
                    None => Arc::new(Offline),
                };
                let n: Option<Arc<dyn NliClassifier>> = match table("nli", nli) {
                    Some(p) => Some(Arc::new(TableNli::load(&p).with_context(|| format!("loading {}", p.display()))?)),
                    None => None,
                };
                let r: Arc<dyn RelevanceScorer> = match table("relevance", relevance) {
                    Some(p) => Arc::new(TableRelevance::load(&p).with_context(|| format!("loading {}", p.display()))?),
                    None => Arc::new(TableRelevance::new()),
                };
                Self {
                    name: name.clone(),
                    ids,
                    questions: q.unwrap_or_else(|| Arc::new(Offline)),
                    answers: a.unwrap_or_else(|| Arc::new(Offline)),
                    fusion: f,
                    judge: j,
                    nli: n,
                    qa: Arc::new(SpanQa),
                    similarity: Arc::new(TokenF1Similarity),
                    relevance: r,
                }
            }
        };
        if let Some(dir) = &cfg.policy.checkpoint {
            let dir = cfg.resolve(dir);
            b.questions = Arc::new(PolicyGenerator::new(load_policy(cfg, &dir)?));
            b.ids.push(format!("{name}:questions:checkpoint:{}", dir.display()));
        }
        Ok(b)
    }

    /// Reward engine over these backends. The NLI filter is attached when
    /// configured and available.
    pub fn engine(&self, cfg: &Config, cache: Option<Arc<RewardCache>>) -> RewardEngine {
        let mut e = RewardEngine::new(self.answers.clone(), self.judge.clone())
            .with_samples(cfg.reward.samples_per_type)
            .with_decoding(cfg.decoding);
        if let Some(f) = &self.fusion {
            e = e.with_fusion(f.clone());
        }
        if cfg.reward.nli_filter {
            match &self.nli {
                Some(n) => e = e.with_classifier(n.clone()),
                None => log::warn!("reward.nli_filter is set but backend {:?} has no NLI classifier", self.name),
            }
        }
        if let Some(c) = cache {
            e = e.with_cache(c);
        }
        e
    }

    pub fn interactive(&self, cfg: &Config) -> InteractiveJudge {
        let mut j = InteractiveJudge::new(self.questions.clone(), self.judge.clone())
            .with_decoding(cfg.decoding)
            .with_turn_limit(cfg.serve.turn_limit);
        if let Some(f) = &self.fusion {
            j = j.with_fusion(f.clone());
        }
        j
    }

    pub fn sessions(&self, cfg: &Config) -> SessionManager {
        let m = SessionManager::new(self.interactive(cfg));
        match &cfg.serve.persist {
            Some(p) => m.with_persistence(cfg.resolve(p)),
            None => m,
        }
    }
}

pub fn load_policy(cfg: &Config, dir: &Path) -> Result<SoftmaxPolicy> {
    let ck = Checkpoint::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    let (mut policy, mut value) = cfg.policy.build()?;
    ck.restore(&mut policy, &mut value)?;
    Ok(policy)
}

/// Situations from `data.situations` (one per line), else the gold corpus.
pub fn load_situations(cfg: &Config) -> Result<Vec<Situation>> {
    if let Some(p) = &cfg.data.situations {
        let p = cfg.resolve(p);
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let out: Vec<Situation> = text.lines().filter_map(|l| Situation::new(l.trim()).ok()).collect();
        if out.is_empty() {
            bail!("{} holds no situations", p.display());
        }
        return Ok(out);
    }
    if let Some(p) = &cfg.data.gold {
        let gold = data::load_gold(cfg.resolve(p))?;
        return Ok(gold.into_iter().map(|g| g.situation).collect());
    }
    bail!("no situations: set data.situations or data.gold")
}
