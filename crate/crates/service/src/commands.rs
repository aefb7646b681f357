//! Subcommand bodies. `main` only parses arguments and calls into here.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use quandary::backends::policy::PolicyGenerator;
use quandary::backends::DecodingParams;
use quandary::data::{self, StartStats};
use quandary::defeasibility::{estimate_stats, RewardCache, RewardStats};
use quandary::eval::{evaluate_questions, update_generation_scores, EvalBackends, EvalReport, Provenance, QuestionItem};
use quandary::pipelines::{self, Candidate, Method};
use quandary::ppo::{write_log_jsonl, Trainer};
use quandary::session::SessionState;
use quandary::{JudgmentDistribution, Question, Situation};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::wiring::{load_situations, Backends};

/// Flags every subcommand accepts.
#[derive(Debug, Clone, Default)]
pub struct RunOpts {
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub out: Option<PathBuf>,
}

impl RunOpts {
    pub fn seed(&self, cfg: &Config) -> u64 {
        self.seed.unwrap_or(cfg.seed)
    }

    fn decoding(&self, cfg: &Config) -> DecodingParams {
        cfg.decoding.with_seed(self.seed(cfg))
    }
}

/// Writes to `--out` or stdout.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes)?;
            Ok(stdout.flush()?)
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    emit(out, &bytes)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

/// `estimate-stats` output; `train` reads it back through `reward.stats`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub stats: RewardStats,
    pub rewards: Vec<f64>,
}

pub fn estimate(cfg: &Config, opts: &RunOpts) -> Result<StatsFile> {
    let situations = load_situations(cfg)?;
    let b = Backends::from_config(cfg, opts.backend.as_deref())?;
    let engine = b.engine(cfg, None);
    let (stats, rewards) = estimate_stats(&situations, b.questions.as_ref(), &opts.decoding(cfg), &engine)?;
    let file = StatsFile { stats, rewards };
    emit_json(opts.out.as_deref(), &file)?;
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub stats: RewardStats,
    pub final_mean_raw_reward: Option<f64>,
    pub out_dir: PathBuf,
}

/// Trains the configured policy. Writes `log.jsonl`, `stats.json` and
/// `checkpoint/` into `--out` (default `runs/train`).
pub fn train(cfg: &Config, opts: &RunOpts) -> Result<TrainSummary> {
    let seed = opts.seed(cfg);
    let out_dir = opts.out.clone().unwrap_or_else(|| PathBuf::from("runs/train"));
    fs::create_dir_all(&out_dir)?;
    let situations = load_situations(cfg)?;
    let b = Backends::from_config(cfg, opts.backend.as_deref())?;
    let cache_path = cfg.reward.cache.as_ref().map(|p| cfg.resolve(p));
    let cache = Arc::new(match &cache_path {
        Some(p) if p.exists() => RewardCache::load(p)?,
        _ => RewardCache::new(),
    });
    let engine = b.engine(cfg, Some(cache.clone()));
    let (policy, value) = cfg.policy.build()?;

    let stats = match &cfg.reward.stats {
        Some(p) => {
            let p = cfg.resolve(p);
            let f: StatsFile = serde_json::from_slice(&fs::read(&p).with_context(|| format!("reading {}", p.display()))?)?;
            f.stats
        }
        None => {
            let generator = PolicyGenerator::new(policy.clone());
            estimate_stats(&situations, &generator, &cfg.ppo.decoding(Some(seed)), &engine)?.0
        }
    };
    log::info!("reward stats: mu0 {:.4} sigma0 {:.4} (n = {})", stats.mu0, stats.sigma0, stats.sample_size);
    emit_json(Some(&out_dir.join("stats.json")), &stats)?;

    let mut trainer = Trainer::new(policy, value, cfg.ppo.clone(), stats, seed)?;
    let mut log = Vec::with_capacity(cfg.ppo.total_steps);
    for _ in 0..cfg.ppo.total_steps {
        let rec = trainer.step(&situations, &engine)?;
        if rec.step % 50 == 0 {
            log::info!("step {} raw {:.3} kl {:.4}", rec.step, rec.mean_raw_reward, rec.mean_kl);
        }
        log.push(rec);
    }
    write_log_jsonl(out_dir.join("log.jsonl"), &log)?;
    trainer.checkpoint().save(out_dir.join("checkpoint"))?;
    if let Some(p) = &cache_path {
        cache.save(p)?;
    }
    Ok(TrainSummary {
        steps: log.len(),
        stats,
        final_mean_raw_reward: log.last().map(|r| r.mean_raw_reward),
        out_dir,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub situation: Situation,
    pub method: Method,
    pub question: Question,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Candidate>,
}

/// One question per situation with the chosen baseline, as JSONL.
pub fn rank(cfg: &Config, opts: &RunOpts, method: Method) -> Result<Vec<RankRecord>> {
    let situations = load_situations(cfg)?;
    let b = Backends::from_config(cfg, opts.backend.as_deref())?;
    let params = opts.decoding(cfg);
    let engine = b.engine(cfg, None);
    if method == Method::PipelineNli && engine.classifier.is_none() {
        bail!("pipeline-nli needs an NLI classifier on backend {:?}", b.name);
    }
    let mut out = Vec::with_capacity(situations.len());
    for s in situations {
        let (question, candidates) = match method {
            Method::Finetuned => (pipelines::finetuned_question(b.questions.as_ref(), &s, &params)?, Vec::new()),
            Method::Why => (pipelines::why_question(b.questions.as_ref(), &s, &params)?, Vec::new()),
            Method::Discriminator => {
                let mut c = pipelines::generate_candidates(b.questions.as_ref(), &s, &cfg.rank.starts, &params)?;
                (pipelines::discriminator_select(&mut c, b.relevance.as_ref())?, c.candidates)
            }
            Method::Pipeline | Method::PipelineNli => {
                let mut c = pipelines::generate_candidates(b.questions.as_ref(), &s, &cfg.rank.starts, &params)?;
                let q = pipelines::divergence_rank(&mut c, &engine, method == Method::PipelineNli)?;
                (q, c.candidates)
            }
        };
        out.push(RankRecord {
            situation: s,
            method,
            question,
            candidates,
        });
    }
    let mut bytes = Vec::new();
    for r in &out {
        serde_json::to_writer(&mut bytes, r)?;
        bytes.push(b'\n');
    }
    emit(opts.out.as_deref(), &bytes)?;
    Ok(out)
}

/// Line of the `eval.updates` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateItem {
    pub candidate: String,
    pub references: Vec<String>,
}

pub fn eval(cfg: &Config, opts: &RunOpts) -> Result<EvalReport> {
    if cfg.eval.questions.is_none() && cfg.eval.updates.is_none() {
        bail!("nothing to evaluate: set eval.questions and/or eval.updates");
    }
    let b = Backends::from_config(cfg, opts.backend.as_deref())?;
    let provenance = Provenance {
        corpus_path: cfg.eval.questions.as_ref().or(cfg.eval.updates.as_ref()).map(|p| cfg.resolve(p).display().to_string()),
        backend_ids: b.ids.clone(),
        config_hash: Some(cfg.hash()),
    };
    let mut report = match &cfg.eval.questions {
        Some(p) => {
            let items: Vec<QuestionItem> = read_jsonl(&cfg.resolve(p))?;
            let engine = b.engine(cfg, None);
            let backends = EvalBackends {
                qa: Some(b.qa.as_ref()),
                similarity: Some(b.similarity.as_ref()),
                engine: cfg.eval.divergence.then_some(&engine),
                oracle: None,
            };
            evaluate_questions(&items, backends, provenance)?
        }
        None => EvalReport {
            tokenization: quandary::eval::TOKENIZATION.into(),
            provenance,
            ..Default::default()
        },
    };
    if let Some(p) = &cfg.eval.updates {
        let items: Vec<UpdateItem> = read_jsonl(&cfg.resolve(p))?;
        let pairs: Vec<(String, Vec<String>)> = items.into_iter().map(|i| (i.candidate, i.references)).collect();
        let (bleu, rouge) = update_generation_scores(&pairs, cfg.eval.smoothing)?;
        report.bleu4 = Some(bleu);
        report.rouge_l = Some(rouge);
        report.n = report.n.max(pairs.len());
    }
    emit_json(opts.out.as_deref(), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub gold: Option<StartStats>,
    pub silver: Option<StartStats>,
}

/// Question-start statistics for the configured gold and silver corpora.
pub fn stats(cfg: &Config, opts: &RunOpts) -> Result<CorpusStats> {
    if cfg.data.gold.is_none() && cfg.data.silver.is_none() {
        bail!("set data.gold and/or data.silver");
    }
    let gold = match &cfg.data.gold {
        Some(p) => Some(data::gold_start_stats(&data::load_gold(cfg.resolve(p))?)),
        None => None,
    };
    let silver = match &cfg.data.silver {
        Some(p) => Some(data::silver_start_stats(&data::load_silver(cfg.resolve(p))?)),
        None => None,
    };
    let s = CorpusStats { gold, silver };
    emit_json(opts.out.as_deref(), &s)?;
    Ok(s)
}

fn show_judgment(j: &JudgmentDistribution) -> String {
    format!("bad {:.2}  ok {:.2}  good {:.2}", j.bad(), j.ok(), j.good())
}

/// Terminal loop: a situation, then answers until the turn limit. Finished
/// sessions are appended to `--out` as JSONL when given. Returns them.
pub fn interact(cfg: &Config, opts: &RunOpts, input: impl BufRead, mut output: impl Write) -> Result<Vec<SessionState>> {
    let b = Backends::from_config(cfg, opts.backend.as_deref())?;
    let judge = b.interactive(cfg).with_decoding(opts.decoding(cfg));
    let mut lines = input.lines();
    let mut done = Vec::new();
    let mut n = 0usize;
    loop {
        write!(output, "situation> ")?;
        output.flush()?;
        let Some(line) = lines.next().transpose()? else { break };
        if line.trim().is_empty() {
            continue;
        }
        n += 1;
        let mut state = match judge.start(format!("local-{n}"), &line) {
            Ok(s) => s,
            Err(e) => {
                writeln!(output, "error: {e}")?;
                continue;
            }
        };
        writeln!(output, "judgment: {}", show_judgment(state.judgment()))?;
        while let Some(q) = state.question.clone() {
            write!(output, "Q: {}\nanswer> ", q.text())?;
            output.flush()?;
            let Some(ans) = lines.next().transpose()? else {
                return Ok(done);
            };
            match judge.answer(&mut state, &ans) {
                Ok(()) => writeln!(output, "judgment: {}", show_judgment(state.judgment()))?,
                Err(e) => writeln!(output, "error: {e}")?,
            }
        }
        writeln!(output, "final: {}", quandary::argmax_judgment(state.judgment()).as_str())?;
        if let Some(p) = &opts.out {
            quandary::session::append_session(p, &state)?;
        }
        done.push(state);
    }
    writeln!(output)?;
    Ok(done)
}
