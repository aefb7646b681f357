//! Deterministic scripted backends.
//!
//! Fixture tables can be built in code or loaded from JSONL files of
//! `{"key": ..., "value": ...}` records. A `null` key sets the table default.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use super::{
    BackendError, Generation, GenerationRequest, JudgmentOracle, NliClassifier, NliLabel, QaModel,
    RelevanceScorer, Result, SimilarityScorer, TextGenerator,
};
use crate::text;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("reading fixture {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture {path} line {line}: {message}")]
    Record {
        path: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Deserialize)]
pub struct FixtureRecord {
    pub key: Value,
    pub value: Value,
}

/// Reads `{"key": ..., "value": ...}` records, one per line. Blank lines are skipped.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<(usize, FixtureRecord)>, FixtureError> {
    let path_str = path.as_ref().display().to_string();
    let file = File::open(path.as_ref()).map_err(|source| FixtureError::Io {
        path: path_str.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| FixtureError::Io {
            path: path_str.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FixtureRecord = serde_json::from_str(&line).map_err(|e| FixtureError::Record {
            path: path_str.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn bad_record(path: &Path, line: usize, message: impl Into<String>) -> FixtureError {
    FixtureError::Record {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn string_list(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::String(s) => Some(vec![s.clone()]),
        Value::Array(items) => items.iter().map(|i| i.as_str().map(str::to_owned)).collect(),
        _ => None,
    }
}

fn string_pair(v: &Value) -> Option<(String, String)> {
    match string_list(v)?.as_slice() {
        [a, b] => Some((a.clone(), b.clone())),
        _ => None,
    }
}

/// Text generator driven by a substring rule table.
///
/// The first rule whose keys all occur in the prompt fires. A rule may hold several
/// outputs; the request seed picks among them (`seed % len`), which is how a
/// fixture simulates repeated sampling. With no matching rule and no default
/// the generator reports itself unavailable.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGenerator {
    rules: Vec<(Vec<String>, Vec<String>)>,
    default: Option<Vec<String>>,
}

impl ScriptedGenerator {
    pub fn from_pairs<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        Self {
            rules: pairs.into_iter().map(|(k, v)| (vec![k.into()], vec![v.into()])).collect(),
            default: None,
        }
    }

    /// Echo mode: every prompt yields `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        Self {
            rules: Vec::new(),
            default: Some(vec![text.into()]),
        }
    }

    pub fn rule(mut self, key: impl Into<String>, output: impl Into<String>) -> Self {
        self.rules.push((vec![key.into()], vec![output.into()]));
        self
    }

    /// A rule that fires only when every key occurs in the prompt.
    pub fn rule_all<S: Into<String>>(mut self, keys: impl IntoIterator<Item = S>, output: impl Into<String>) -> Self {
        self.rules.push((keys.into_iter().map(Into::into).collect(), vec![output.into()]));
        self
    }

    pub fn rule_samples<S: Into<String>>(mut self, key: impl Into<String>, outputs: impl IntoIterator<Item = S>) -> Self {
        let outs: Vec<String> = outputs.into_iter().map(Into::into).collect();
        assert!(!outs.is_empty(), "a rule needs at least one output");
        self.rules.push((vec![key.into()], outs));
        self
    }

    pub fn with_default(mut self, output: impl Into<String>) -> Self {
        self.default = Some(vec![output.into()]);
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let path = path.as_ref();
        let mut g = Self::default();
        for (line, rec) in read_records(path)? {
            let outs = string_list(&rec.value)
                .filter(|o| !o.is_empty())
                .ok_or_else(|| bad_record(path, line, "value must be a string or a nonempty string array"))?;
            match &rec.key {
                Value::Null => g.default = Some(outs),
                k => {
                    let keys = string_list(k)
                        .ok_or_else(|| bad_record(path, line, "key must be a string, string array or null"))?;
                    g.rules.push((keys, outs));
                }
            }
        }
        Ok(g)
    }

    fn lookup(&self, prompt: &str) -> Option<&[String]> {
        self.rules
            .iter()
            .find(|(keys, _)| keys.iter().all(|k| prompt.contains(k.as_str())))
            .map(|(_, v)| v.as_slice())
            .or(self.default.as_deref())
    }
}

impl TextGenerator for ScriptedGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation> {
        let outs = self
            .lookup(&request.prompt)
            .ok_or_else(|| BackendError::Unavailable("scripted generator has no rule for prompt".into()))?;
        let idx = (request.params.seed.unwrap_or(0) % outs.len() as u64) as usize;
        let text = &outs[idx];
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.len() > request.params.max_tokens {
            Ok(Generation {
                text: words[..request.params.max_tokens].join(" "),
                truncated: true,
            })
        } else {
            Ok(Generation {
                text: text.clone(),
                truncated: false,
            })
        }
    }
}

/// Judgment oracle driven by rules of the form "all of these substrings occur
/// in the text" → raw scores. Unmatched text gets the default (uniform unless
/// overridden).
#[derive(Debug, Clone)]
pub struct ScriptedJudge {
    rules: Vec<(Vec<String>, [f64; 3])>,
    default: [f64; 3],
}

impl Default for ScriptedJudge {
    fn default() -> Self {
        Self::new()
    }
}

impl ScriptedJudge {
    pub fn new() -> Self {
        Self {
            rules: Vec::new(),
            default: [1.0, 1.0, 1.0],
        }
    }

    pub fn rule<S: Into<String>>(mut self, all_of: impl IntoIterator<Item = S>, scores: [f64; 3]) -> Self {
        self.rules.push((all_of.into_iter().map(Into::into).collect(), scores));
        self
    }

    pub fn with_default(mut self, scores: [f64; 3]) -> Self {
        self.default = scores;
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let path = path.as_ref();
        let mut j = Self::new();
        for (line, rec) in read_records(path)? {
            let scores = parse_scores(&rec.value)
                .ok_or_else(|| bad_record(path, line, "value must be [bad, ok, good] or {bad, ok, good}"))?;
            match &rec.key {
                Value::Null => j.default = scores,
                k => {
                    let pats = string_list(k)
                        .ok_or_else(|| bad_record(path, line, "key must be a string, string array or null"))?;
                    j.rules.push((pats, scores));
                }
            }
        }
        Ok(j)
    }
}

fn parse_scores(v: &Value) -> Option<[f64; 3]> {
    match v {
        Value::Array(a) if a.len() == 3 => Some([a[0].as_f64()?, a[1].as_f64()?, a[2].as_f64()?]),
        Value::Object(o) => Some([o.get("bad")?.as_f64()?, o.get("ok")?.as_f64()?, o.get("good")?.as_f64()?]),
        _ => None,
    }
}

impl JudgmentOracle for ScriptedJudge {
    fn raw_scores(&self, text: &str) -> Result<[f64; 3]> {
        Ok(self
            .rules
            .iter()
            .find(|(pats, _)| pats.iter().all(|p| text.contains(p.as_str())))
            .map(|(_, s)| *s)
            .unwrap_or(self.default))
    }
}

/// NLI lookup table. Identical strings entail each other; unknown pairs are
/// neutral.
#[derive(Debug, Clone, Default)]
pub struct TableNli {
    pairs: HashMap<(String, String), NliLabel>,
}

impl TableNli {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pair(mut self, premise: impl Into<String>, hypothesis: impl Into<String>, label: NliLabel) -> Self {
        self.pairs.insert((premise.into(), hypothesis.into()), label);
        self
    }

    pub fn insert(&mut self, premise: impl Into<String>, hypothesis: impl Into<String>, label: NliLabel) {
        self.pairs.insert((premise.into(), hypothesis.into()), label);
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let path = path.as_ref();
        let mut t = Self::new();
        for (line, rec) in read_records(path)? {
            let (p, h) = string_pair(&rec.key)
                .ok_or_else(|| bad_record(path, line, "key must be [premise, hypothesis]"))?;
            let label: NliLabel = serde_json::from_value(rec.value)
                .map_err(|e| bad_record(path, line, e.to_string()))?;
            t.pairs.insert((p, h), label);
        }
        Ok(t)
    }
}

impl NliClassifier for TableNli {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliLabel> {
        if let Some(l) = self.pairs.get(&(premise.to_owned(), hypothesis.to_owned())) {
            return Ok(*l);
        }
        if premise == hypothesis {
            return Ok(NliLabel::Entailment);
        }
        Ok(NliLabel::Neutral)
    }
}

const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "of", "to", "for", "in", "on", "at", "with", "about", "by", "from", "do", "does",
    "did", "is", "are", "was", "were", "be", "been", "have", "has", "had", "will", "would", "can",
    "could", "should", "you", "your", "i", "me", "my", "he", "she", "it", "its", "they", "them", "their",
    "we", "us", "our", "this", "that", "these", "those", "there", "kind", "sort",
];

/// Extractive-QA fixture.
///
/// The question's *argument* is what remains after dropping the leading
/// wh-word and function words (auxiliaries, pronouns, articles, prepositions).
/// The question is answerable iff the argument is nonempty and every argument
/// word occurs verbatim among the context words.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpanQa;

impl SpanQa {
    pub fn argument(question: &str) -> Vec<String> {
        text::words(question)
            .into_iter()
            .skip(1)
            .filter(|w| !FUNCTION_WORDS.contains(&w.as_str()))
            .collect()
    }
}

impl QaModel for SpanQa {
    fn answerable(&self, context: &str, question: &str) -> Result<bool> {
        let arg = Self::argument(question);
        let ctx = text::words(context);
        Ok(!arg.is_empty() && arg.iter().all(|w| ctx.contains(w)))
    }
}

/// Unigram token-F1 similarity.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenF1Similarity;

impl SimilarityScorer for TokenF1Similarity {
    fn similarity(&self, candidate: &str, reference: &str) -> Result<f64> {
        if candidate == reference {
            return Ok(1.0);
        }
        Ok(text::token_f1(candidate, reference))
    }
}

/// Relevance lookup keyed by (situation, question); unknown pairs fall back
/// to token F1 between situation and question unless a constant default is set.
#[derive(Debug, Clone, Default)]
pub struct TableRelevance {
    scores: HashMap<(String, String), f64>,
    default: Option<f64>,
}

impl TableRelevance {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn score(mut self, situation: impl Into<String>, question: impl Into<String>, p: f64) -> Self {
        self.scores.insert((situation.into(), question.into()), p);
        self
    }

    pub fn with_default(mut self, p: f64) -> Self {
        self.default = Some(p);
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let path = path.as_ref();
        let mut t = Self::new();
        for (line, rec) in read_records(path)? {
            let p = rec
                .value
                .as_f64()
                .ok_or_else(|| bad_record(path, line, "value must be a number"))?;
            match &rec.key {
                Value::Null => t.default = Some(p),
                k => {
                    let pair = string_pair(k)
                        .ok_or_else(|| bad_record(path, line, "key must be [situation, question] or null"))?;
                    t.scores.insert(pair, p);
                }
            }
        }
        Ok(t)
    }
}

impl RelevanceScorer for TableRelevance {
    fn relevance(&self, situation: &str, question: &str) -> Result<f64> {
        if let Some(p) = self.scores.get(&(situation.to_owned(), question.to_owned())) {
            return Ok(*p);
        }
        Ok(self.default.unwrap_or_else(|| text::token_f1(situation, question)))
    }
}

/// A backend that is never reachable. Useful for exercising fallbacks and
/// error paths.
#[derive(Debug, Clone, Copy, Default)]
pub struct Offline;

fn offline<T>() -> Result<T> {
    Err(BackendError::Unavailable("offline backend".into()))
}

impl TextGenerator for Offline {
    fn generate(&self, _: &GenerationRequest) -> Result<Generation> {
        offline()
    }
}

impl JudgmentOracle for Offline {
    fn raw_scores(&self, _: &str) -> Result<[f64; 3]> {
        offline()
    }
}

impl NliClassifier for Offline {
    fn classify(&self, _: &str, _: &str) -> Result<NliLabel> {
        offline()
    }
}

impl QaModel for Offline {
    fn answerable(&self, _: &str, _: &str) -> Result<bool> {
        offline()
    }
}

impl SimilarityScorer for Offline {
    fn similarity(&self, _: &str, _: &str) -> Result<f64> {
        offline()
    }
}

impl RelevanceScorer for Offline {
    fn relevance(&self, _: &str, _: &str) -> Result<f64> {
        offline()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::DecodingParams;
    use std::io::Write;

    fn req(prompt: &str, seed: u64, max_tokens: usize) -> GenerationRequest {
        GenerationRequest::new(
            prompt,
            DecodingParams {
                max_tokens,
                seed: Some(seed),
                ..Default::default()
            },
        )
    }

    #[test]
    fn seed_selects_sample() {
        let g = ScriptedGenerator::default().rule_samples("k", ["a", "b", "c"]);
        let texts: Vec<String> = (0..4).map(|s| g.generate(&req("k", s, 8)).unwrap().text).collect();
        assert_eq!(texts, ["a", "b", "c", "a"]);
    }

    #[test]
    fn long_output_is_truncated_and_flagged() {
        let g = ScriptedGenerator::constant("one two three four");
        let out = g.generate(&req("x", 0, 2)).unwrap();
        assert_eq!(out.text, "one two");
        assert!(out.truncated);
    }

    #[test]
    fn load_tables_from_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let gen_path = dir.path().join("gen.jsonl");
        let mut f = File::create(&gen_path).unwrap();
        writeln!(f, r#"{{"key": "snitch", "value": ["x", "y"]}}"#).unwrap();
        writeln!(f).unwrap();
        writeln!(f, r#"{{"key": null, "value": "<FIXED>"}}"#).unwrap();
        drop(f);
        let g = ScriptedGenerator::load(&gen_path).unwrap();
        assert_eq!(g.generate(&req("a snitch", 1, 8)).unwrap().text, "y");
        assert_eq!(g.generate(&req("other", 1, 8)).unwrap().text, "<FIXED>");

        let all_path = dir.path().join("all.jsonl");
        std::fs::write(&all_path, "{\"key\": [\"a\", \"b\"], \"value\": \"both\"}\n").unwrap();
        let g = ScriptedGenerator::load(&all_path).unwrap();
        assert_eq!(g.generate(&req("b then a", 0, 8)).unwrap().text, "both");
        assert!(g.generate(&req("only a", 0, 8)).is_err());

        let judge_path = dir.path().join("judge.jsonl");
        std::fs::write(
            &judge_path,
            "{\"key\": [\"a\", \"b\"], \"value\": [1, 0, 0]}\n{\"key\": null, \"value\": {\"bad\": 0, \"ok\": 1, \"good\": 0}}\n",
        )
        .unwrap();
        let j = ScriptedJudge::load(&judge_path).unwrap();
        assert_eq!(j.raw_scores("a b").unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(j.raw_scores("a").unwrap(), [0.0, 1.0, 0.0]);

        let nli_path = dir.path().join("nli.jsonl");
        std::fs::write(&nli_path, "{\"key\": [\"p\", \"h\"], \"value\": \"contradiction\"}\n").unwrap();
        let n = TableNli::load(&nli_path).unwrap();
        assert_eq!(n.classify("p", "h").unwrap(), NliLabel::Contradiction);

        let bad_path = dir.path().join("bad.jsonl");
        std::fs::write(&bad_path, "{\"key\": 3, \"value\": \"x\"}\n").unwrap();
        let err = ScriptedGenerator::load(&bad_path).unwrap_err();
        assert!(matches!(err, FixtureError::Record { line: 1, .. }));
    }

    #[test]
    fn relevance_table_and_fallback() {
        let r = TableRelevance::new().score("s", "q", 0.9);
        assert_eq!(r.relevance("s", "q").unwrap(), 0.9);
        assert_eq!(r.relevance("a b", "a b").unwrap(), 1.0);
        assert_eq!(TableRelevance::new().with_default(0.3).relevance("x", "y").unwrap(), 0.3);
    }
}
