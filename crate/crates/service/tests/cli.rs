use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;

use quandary::pipelines::Method;
use quandary::ppo::read_log_jsonl;
use quandary_service::commands::{self, RunOpts, StatsFile};
use quandary_service::Config;

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo")
}

fn demo() -> Config {
    Config::load(demo_dir().join("quandary.toml")).unwrap()
}

fn opts(out: Option<PathBuf>) -> RunOpts {
    RunOpts {
        out,
        ..RunOpts::default()
    }
}

#[test]
fn train_writes_log_checkpoint_and_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = demo();
    cfg.ppo.total_steps = 20;
    let a = commands::train(&cfg, &opts(Some(dir.path().join("a")))).unwrap();
    commands::train(&cfg, &opts(Some(dir.path().join("b")))).unwrap();
    assert_eq!(a.steps, 20);
    let (la, lb) = (read_log_jsonl(dir.path().join("a/log.jsonl")).unwrap(), read_log_jsonl(dir.path().join("b/log.jsonl")).unwrap());
    assert_eq!(la.len(), 20);
    assert_eq!(la, lb);
    assert_eq!(
        fs::read(dir.path().join("a/checkpoint/policy.json")).unwrap(),
        fs::read(dir.path().join("b/checkpoint/policy.json")).unwrap()
    );

    let other = RunOpts {
        seed: Some(7),
        out: Some(dir.path().join("c")),
        ..RunOpts::default()
    };
    commands::train(&cfg, &other).unwrap();
    assert_ne!(read_log_jsonl(dir.path().join("c/log.jsonl")).unwrap(), la);

    // The checkpoint then drives question generation.
    cfg.policy.checkpoint = Some(dir.path().join("a/checkpoint"));
    let ranked = commands::rank(&cfg, &opts(Some(dir.path().join("r.jsonl"))), Method::Finetuned).unwrap();
    assert_eq!(ranked.len(), 4);
}

#[test]
fn stats_file_feeds_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo();
    let stats_path = dir.path().join("stats.json");
    let est = commands::estimate(&cfg, &opts(Some(stats_path.clone()))).unwrap();
    assert_eq!(est.rewards.len(), 4);
    let back: StatsFile = serde_json::from_slice(&fs::read(&stats_path).unwrap()).unwrap();
    assert_eq!(back, est);

    let mut cfg = cfg;
    cfg.reward.stats = Some(stats_path);
    cfg.ppo.total_steps = 2;
    let s = commands::train(&cfg, &opts(Some(dir.path().join("run")))).unwrap();
    assert_eq!(s.stats, est.stats);
}

#[test]
fn rank_every_method() {
    let cfg = demo();
    let dir = tempfile::tempdir().unwrap();
    for m in Method::ALL {
        let out = dir.path().join(format!("{m}.jsonl"));
        let recs = commands::rank(&cfg, &opts(Some(out.clone())), m).unwrap();
        assert_eq!(recs.len(), 4, "{m}");
        assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 4);
        match m {
            Method::Why => assert!(recs.iter().all(|r| r.question.text().starts_with("Why"))),
            Method::Discriminator => assert_eq!(recs[0].question.text(), "Was it an emergency?"),
            Method::Pipeline | Method::PipelineNli => {
                assert!(recs.iter().all(|r| r.candidates.len() == 12 && r.candidates.iter().all(|c| c.score.is_some())));
                assert_eq!(recs[0].question.text(), "Who asked you to do it?");
            }
            Method::Finetuned => assert!(recs.iter().all(|r| r.candidates.is_empty())),
        }
    }
}

#[test]
fn pipeline_nli_needs_a_classifier() {
    let mut cfg = demo();
    if let Some(quandary_service::config::BackendConfig::Fixture { nli, .. }) = cfg.backends.get_mut("fixture") {
        *nli = None;
    }
    assert!(commands::rank(&cfg, &opts(None), Method::PipelineNli).is_err());
}

#[test]
fn eval_and_stats_reports() {
    let cfg = demo();
    let dir = tempfile::tempdir().unwrap();
    let r = commands::eval(&cfg, &opts(Some(dir.path().join("eval.json")))).unwrap();
    assert_eq!(r.n, 3);
    assert!(r.rates_in_range());
    assert!(r.mean_jsd.is_some() && r.pct_judgment_flips.is_some());
    assert!(r.bleu4.unwrap() > 0.48 && r.rouge_l.is_some());
    assert_eq!(r.provenance.config_hash.as_deref(), Some(cfg.hash().as_str()));

    let s = commands::stats(&cfg, &opts(Some(dir.path().join("stats.json")))).unwrap();
    let gold = s.gold.unwrap();
    assert!((gold.start_distribution.values().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(s.silver.is_some());
}

#[test]
fn interact_runs_three_turns() {
    let cfg = demo();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sessions.jsonl");
    let input = Cursor::new("lying to my boss\nI was sick\nno\nI apologized\n");
    let mut shown = Vec::new();
    let done = commands::interact(&cfg, &opts(Some(out.clone())), input, &mut shown).unwrap();
    let shown = String::from_utf8(shown).unwrap();
    assert_eq!(done.len(), 1);
    assert_eq!(done[0].turns.len(), 3);
    assert_eq!(shown.matches("Q: ").count(), 3);
    assert_eq!(shown.matches("judgment: ").count(), 4);
    assert!(shown.contains("final: "));
    assert_eq!(quandary::session::load_sessions(&out).unwrap(), done);
}

#[test]
fn binary_surface() {
    let exe = env!("CARGO_BIN_EXE_quandary");
    let help = Command::new(exe).arg("--help").output().unwrap();
    let text = String::from_utf8(help.stdout).unwrap();
    for sub in ["train", "estimate-stats", "rank", "eval", "stats", "serve", "interact"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    let rank_help = String::from_utf8(Command::new(exe).args(["rank", "--help"]).output().unwrap().stdout).unwrap();
    for flag in ["--seed", "--backend", "--out", "--method", "--config"] {
        assert!(rank_help.contains(flag), "{flag}");
    }

    let cfg = demo_dir().join("quandary.toml");
    let bad = Command::new(exe).args(["rank", "--method", "bogus", "-c"]).arg(&cfg).output().unwrap();
    assert!(!bad.status.success());

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("why.jsonl");
    let ok = Command::new(exe)
        .args(["rank", "--method", "why", "--seed", "3", "--backend", "fixture", "-c"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 4);

    let missing = Command::new(exe).args(["stats", "--backend", "nope", "-c"]).arg(&cfg).output().unwrap();
    assert!(missing.status.success(), "stats does not touch backends");
    let missing = Command::new(exe).args(["eval", "--backend", "nope", "-c"]).arg(&cfg).output().unwrap();
    assert!(!missing.status.success());
}
