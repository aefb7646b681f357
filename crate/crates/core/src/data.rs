//! Corpus files and corpus statistics.
//!
//! Gold records hold a situation with its crowdsourced questions; silver
//! records are (situation, update type, question, answer) tuples whose
//! questions were generated by prompting a large model with a few exemplars.
//! Everything is JSONL, one record per line.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Answer, Question, Situation, UpdateType};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Violations(ViolationReport),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

/// A malformed line and what was wrong with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ViolationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} schema violation(s)", self.violations.len())?;
        for v in self.violations.iter().take(5) {
            write!(f, "; line {}: {}", v.line, v.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub situation: Situation,
    pub questions: Vec<Question>,
    pub split: Split,
}

impl GoldRecord {
    fn check(&self) -> Result<(), String> {
        if self.questions.is_empty() {
            return Err("record has no questions".into());
        }
        if let Some(i) = self.questions.iter().position(|q| q.text().trim().is_empty()) {
            return Err(format!("question {i} is empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SilverRepr", into = "SilverRepr")]
pub struct SilverRecord {
    pub situation: Situation,
    pub question: Question,
    /// Carries the record's update type.
    pub answer: Answer,
}

impl SilverRecord {
    pub fn update_type(&self) -> UpdateType {
        self.answer.update_type()
    }
}

#[derive(Serialize, Deserialize)]
struct SilverRepr {
    situation: Situation,
    update_type: UpdateType,
    question: Question,
    answer: String,
}

impl TryFrom<SilverRepr> for SilverRecord {
    type Error = String;

    fn try_from(r: SilverRepr) -> Result<Self, Self::Error> {
        if r.question.text().trim().is_empty() {
            return Err("question is empty".into());
        }
        let answer = Answer::new(r.answer, r.update_type).map_err(|e| e.to_string())?;
        Ok(Self {
            situation: r.situation,
            question: r.question,
            answer,
        })
    }
}

impl From<SilverRecord> for SilverRepr {
    fn from(r: SilverRecord) -> Self {
        Self {
            update_type: r.answer.update_type(),
            answer: r.answer.text().to_string(),
            situation: r.situation,
            question: r.question,
        }
    }
}

/// Reads every line, collecting parse and validation failures instead of
/// stopping at the first one. Blank lines are skipped.
fn read_jsonl<T: DeserializeOwned>(
    path: &Path,
    check: impl Fn(&T) -> Result<(), String>,
) -> Result<(Vec<T>, ViolationReport), DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut report = ViolationReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<T>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| check(&r).map(|_| r));
        match parsed {
            Ok(r) => records.push(r),
            Err(message) => report.violations.push(Violation { line: i + 1, message }),
        }
    }
    Ok((records, report))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Valid records plus a report of the lines that were not.
pub fn read_gold(path: impl AsRef<Path>) -> Result<(Vec<GoldRecord>, ViolationReport), DataError> {
    read_jsonl(path.as_ref(), GoldRecord::check)
}

/// Like [`read_gold`], but any violation is an error.
pub fn load_gold(path: impl AsRef<Path>) -> Result<Vec<GoldRecord>, DataError> {
    let (records, report) = read_gold(path)?;
    if !report.violations.is_empty() {
        return Err(DataError::Violations(report));
    }
    Ok(records)
}

pub fn save_gold(path: impl AsRef<Path>, records: &[GoldRecord]) -> Result<(), DataError> {
    write_jsonl(path.as_ref(), records)
}

pub fn read_silver(path: impl AsRef<Path>) -> Result<(Vec<SilverRecord>, ViolationReport), DataError> {
    read_jsonl(path.as_ref(), |_: &SilverRecord| Ok(()))
}

pub fn load_silver(path: impl AsRef<Path>) -> Result<Vec<SilverRecord>, DataError> {
    let (records, report) = read_silver(path)?;
    if !report.violations.is_empty() {
        return Err(DataError::Violations(report));
    }
    Ok(records)
}

pub fn save_silver(path: impl AsRef<Path>, records: &[SilverRecord]) -> Result<(), DataError> {
    write_jsonl(path.as_ref(), records)
}

/// A defeasible-inference triple: a situation and an update that weakens or
/// strengthens it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefeasibleTriple {
    pub situation: String,
    pub update_type: UpdateType,
    pub update: String,
}

/// An in-context example for silver question generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub situation: String,
    pub update_type: UpdateType,
    pub update: String,
    pub question: String,
}

pub const SHOTS: usize = 5;

pub fn default_exemplars() -> [Exemplar; SHOTS] {
    let ex = |s: &str, u: UpdateType, a: &str, q: &str| Exemplar {
        situation: s.into(),
        update_type: u,
        update: a.into(),
        question: q.into(),
    };
    use UpdateType::*;
    [
        ex(
            "Lying to your friend",
            Weakener,
            "You lied to protect them from someone dangerous.",
            "Why did you lie to your friend?",
        ),
        ex(
            "Skipping your sister's wedding",
            Strengthener,
            "You skipped it to go to a concert.",
            "What did you do instead of going?",
        ),
        ex(
            "Telling your boss about a coworker stealing",
            Weakener,
            "The coworker was stealing food to feed their kids.",
            "What was your coworker stealing?",
        ),
        ex(
            "Not lending money to your brother",
            Strengthener,
            "Your brother needed the money for rent.",
            "What did your brother need the money for?",
        ),
        ex(
            "Eating your roommate's leftovers",
            Weakener,
            "Your roommate said you could eat anything in the fridge.",
            "Did your roommate say you could eat their food?",
        ),
    ]
}

/// A few-shot prompt with the metadata needed to turn its completion into a
/// [`SilverRecord`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SilverPrompt {
    pub prompt: String,
    pub target: DefeasibleTriple,
}

impl SilverPrompt {
    /// Joins a completion (the generated question) back to its target.
    pub fn complete(&self, completion: &str) -> Option<SilverRecord> {
        let question = completion.lines().next().unwrap_or("").trim();
        if question.is_empty() {
            return None;
        }
        Some(SilverRecord {
            situation: Situation::new(self.target.situation.clone()).ok()?,
            question: Question::new(question),
            answer: Answer::new(self.target.update.clone(), self.target.update_type).ok()?,
        })
    }
}

fn prompt_block(situation: &str, u: UpdateType, update: &str) -> String {
    format!("Situation: {situation}\n{}: {update}\nQuestion:", u.label())
}

pub fn build_silver_prompts(triples: &[DefeasibleTriple], exemplars: &[Exemplar; SHOTS]) -> Vec<SilverPrompt> {
    let shots: String = exemplars
        .iter()
        .map(|e| format!("{} {}\n\n", prompt_block(&e.situation, e.update_type, &e.update), e.question))
        .collect();
    triples
        .iter()
        .map(|t| SilverPrompt {
            prompt: format!("{shots}{}", prompt_block(&t.situation, t.update_type, &t.update)),
            target: t.clone(),
        })
        .collect()
}

/// Question-start statistics over situations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartStats {
    /// Share of all questions by lowercased first token.
    pub start_distribution: BTreeMap<String, f64>,
    /// Share of situations with at least two identical questions.
    pub identical_question_fraction: f64,
    /// Share of situations whose questions all start with the same token.
    pub same_wh_fraction: f64,
}

/// Statistics over groups of questions, one group per situation. Questions
/// without a first token are left out of the start distribution.
pub fn question_start_stats<'a, G>(groups: impl IntoIterator<Item = G>) -> StartStats
where
    G: IntoIterator<Item = &'a Question>,
{
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let (mut situations, mut identical, mut same) = (0usize, 0usize, 0usize);
    for group in groups {
        let qs: Vec<&Question> = group.into_iter().collect();
        if qs.is_empty() {
            continue;
        }
        situations += 1;
        let mut seen = HashSet::new();
        if qs.iter().any(|q| !seen.insert(q.text())) {
            identical += 1;
        }
        let starts: Vec<Option<&str>> = qs.iter().map(|q| q.wh_start()).collect();
        if starts[0].is_some() && starts.iter().all(|s| *s == starts[0]) {
            same += 1;
        }
        for s in starts.into_iter().flatten() {
            *counts.entry(s.to_string()).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    let frac = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    StartStats {
        start_distribution: counts.into_iter().map(|(k, n)| (k, frac(n, total))).collect(),
        identical_question_fraction: frac(identical, situations),
        same_wh_fraction: frac(same, situations),
    }
}

pub fn gold_start_stats(records: &[GoldRecord]) -> StartStats {
    question_start_stats(records.iter().map(|r| r.questions.iter()))
}

/// Silver records are grouped by situation text, in first-seen order.
pub fn silver_start_stats(records: &[SilverRecord]) -> StartStats {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&Question>> = HashMap::new();
    for r in records {
        let key = r.situation.text();
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(&r.question);
    }
    question_start_stats(order.iter().map(|k| groups[k].iter().copied()))
}

/// (situation, question) pairs generated under both update types, matched on
/// exact question text, in first-seen order.
pub fn defeasible_question_subset(records: &[SilverRecord]) -> Vec<(Situation, Question)> {
    let mut types: HashMap<(&str, &str), [bool; 2]> = HashMap::new();
    for r in records {
        let slot = types.entry((r.situation.text(), r.question.text())).or_default();
        slot[(r.update_type() == UpdateType::Strengthener) as usize] = true;
    }
    let mut emitted = HashSet::new();
    records
        .iter()
        .filter(|r| {
            let key = (r.situation.text(), r.question.text());
            types[&key] == [true, true] && emitted.insert(key)
        })
        .map(|r| (r.situation.clone(), r.question.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TIPPING: &str = r#"{"situation":"Tipping people decently","questions":["What did they do for you?","Can you afford to tip?","Was the service good?","Did the people perform the service adequately?","Do you always tip people well regardless of the service quality?"],"split":"dev"}"#;

    fn file(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn load_gold_examples() {
        let f = file(&[TIPPING]);
        let recs = load_gold(f.path()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].situation.text(), "Tipping people decently");
        assert_eq!(recs[0].questions.len(), 5);
        assert_eq!(recs[0].split, Split::Dev);

        assert!(load_gold(file(&[]).path()).unwrap().is_empty());

        let bad = file(&[TIPPING, r#"{"situation":"x","questions":[],"split":"dev"}"#, "not json"]);
        let (ok, report) = read_gold(bad.path()).unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(report.violations.iter().map(|v| v.line).collect::<Vec<_>>(), vec![2, 3]);
        assert!(matches!(load_gold(bad.path()), Err(DataError::Violations(_))));
    }

    #[test]
    fn gold_round_trip() {
        let recs = load_gold(file(&[TIPPING]).path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_gold(out.path(), &recs).unwrap();
        assert_eq!(load_gold(out.path()).unwrap(), recs);
        assert_eq!(std::fs::read_to_string(out.path()).unwrap().trim(), TIPPING);
    }

    #[test]
    fn silver_round_trip_and_invariant() {
        let line = r#"{"situation":"Lying","update_type":"weakener","question":"Why?","answer":"To protect them."}"#;
        let recs = load_silver(file(&[line]).path()).unwrap();
        assert_eq!(recs[0].update_type(), UpdateType::Weakener);
        assert_eq!(recs[0].answer.update_type(), UpdateType::Weakener);
        let out = tempfile::NamedTempFile::new().unwrap();
        save_silver(out.path(), &recs).unwrap();
        assert_eq!(load_silver(out.path()).unwrap(), recs);
        let blank = r#"{"situation":"Lying","update_type":"weakener","question":"Why?","answer":" "}"#;
        assert!(load_silver(file(&[blank]).path()).is_err());
    }

    #[test]
    fn silver_prompt_examples() {
        let t = DefeasibleTriple {
            situation: "Your kids should be your number one priority".into(),
            update_type: UpdateType::Strengthener,
            update: "Your children are toddlers.".into(),
        };
        let prompts = build_silver_prompts(std::slice::from_ref(&t), &default_exemplars());
        assert_eq!(prompts.len(), 1);
        let p = &prompts[0].prompt;
        let last = p.rsplit("\n\n").next().unwrap();
        assert!(last.contains("Your kids should be your number one priority"));
        assert!(last.contains("Your children are toddlers."));
        assert!(last.ends_with("Question:"));
        assert_eq!(p.matches("Situation:").count(), SHOTS + 1);
        assert!(build_silver_prompts(&[], &default_exemplars()).is_empty());

        let rec = prompts[0].complete(" Are they old enough to go to school?\nmore").unwrap();
        assert_eq!(rec.question.text(), "Are they old enough to go to school?");
        assert_eq!(rec.update_type(), UpdateType::Strengthener);
        assert!(prompts[0].complete("  ").is_none());
    }

    fn qs(v: &[&str]) -> Vec<Question> {
        v.iter().map(|s| Question::new(*s)).collect()
    }

    #[test]
    fn start_stats_examples() {
        let a = qs(&["Why x", "Why y", "Why z", "Why w", "Why v"]);
        let st = question_start_stats([a.iter()]);
        assert_eq!(st.same_wh_fraction, 1.0);
        assert_eq!(st.identical_question_fraction, 0.0);

        let b = qs(&["What a", "What b"]);
        let c = qs(&["Why a", "why a", "Why a"]);
        let st = question_start_stats([b.iter(), c.iter()]);
        assert_eq!(st.start_distribution.get("what"), Some(&0.4));
        assert_eq!(st.identical_question_fraction, 0.5);

        let st = question_start_stats([qs(&["Why a"]).iter(), qs(&["What b"]).iter()]);
        assert_eq!(st.start_distribution, BTreeMap::from([("what".into(), 0.5), ("why".into(), 0.5)]));
        assert!((st.start_distribution.values().sum::<f64>() - 1.0).abs() < 1e-9);

        let empty: [std::slice::Iter<Question>; 0] = [];
        let st = question_start_stats(empty);
        assert!(st.start_distribution.is_empty());
        assert_eq!(st.same_wh_fraction, 0.0);
    }

    fn silver(s: &str, u: UpdateType, q: &str) -> SilverRecord {
        SilverRecord {
            situation: Situation::new(s).unwrap(),
            question: Question::new(q),
            answer: Answer::new("a", u).unwrap(),
        }
    }

    #[test]
    fn defeasible_subset_examples() {
        use UpdateType::*;
        let recs = vec![
            silver("s", Weakener, "Why?"),
            silver("s", Strengthener, "Why?"),
            silver("s", Weakener, "Who?"),
            silver("t", Weakener, "What?"),
            silver("t", Strengthener, "What ?"),
            silver("s", Strengthener, "Why?"),
        ];
        let sub = defeasible_question_subset(&recs);
        assert_eq!(sub, vec![(Situation::new("s").unwrap(), Question::new("Why?"))]);
        // s repeats "Why?"; t's two questions differ by a space.
        let st = silver_start_stats(&recs);
        assert_eq!(st.identical_question_fraction, 0.5);
    }
}
