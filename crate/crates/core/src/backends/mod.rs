//! Interfaces to every learned component.
//!
//! Each model the system consumes is a small trait: free-text generation
//! ([`TextGenerator`], used for questions, answers and sentence fusion),
//! moral judgment ([`JudgmentOracle`]), entailment ([`NliClassifier`]),
//! extractive QA ([`QaModel`]), reference similarity ([`SimilarityScorer`]) and
//! question relevance ([`RelevanceScorer`]). The token-level policy and value
//! models trained by PPO live in [`policy`].
//!
//! [`fixture`] holds deterministic scripted implementations; [`remote`] talks
//! to a JSON-over-HTTP model server.

pub mod fixture;
pub mod policy;
pub mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Answer, JudgmentDistribution, Question, Situation, UpdateType};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub type Result<T, E = BackendError> = std::result::Result<T, E>;

/// Sampling defaults for the question policy.
pub const DEFAULT_TOP_P: f64 = 0.6;
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_TOKENS: usize = 32;

/// Decoding parameters, shared by every generation call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingParams {
    pub max_tokens: usize,
    pub top_p: f64,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            top_p: DEFAULT_TOP_P,
            temperature: DEFAULT_TEMPERATURE,
            seed: None,
        }
    }
}

impl DecodingParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidRequest(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// A prompt plus decoding parameters; this is also the wire format of the
/// remote `/generate` endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    #[serde(flatten)]
    pub params: DecodingParams,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, params: DecodingParams) -> Self {
        Self {
            prompt: prompt.into(),
            params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    /// Set when decoding hit `max_tokens` and the output was cut.
    #[serde(default)]
    pub truncated: bool,
}

/// A value produced by a generator, with the truncation flag carried along.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated<T> {
    pub value: T,
    pub truncated: bool,
}

pub trait TextGenerator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation>;
}

/// Returns unnormalized scores for (bad, ok, good).
pub trait JudgmentOracle: Send + Sync {
    fn raw_scores(&self, text: &str) -> Result<[f64; 3]>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Contradiction,
    Neutral,
}

pub trait NliClassifier: Send + Sync {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliLabel>;
}

pub trait QaModel: Send + Sync {
    /// Whether an answer span for `question` exists in `context`.
    fn answerable(&self, context: &str, question: &str) -> Result<bool>;
}

pub trait SimilarityScorer: Send + Sync {
    fn similarity(&self, candidate: &str, reference: &str) -> Result<f64>;
}

/// Probability that `question` is relevant to `situation` (discriminator).
pub trait RelevanceScorer: Send + Sync {
    fn relevance(&self, situation: &str, question: &str) -> Result<f64>;
}

/// Input for the answer simulator: `<situation>, TYPE: <Weakener|Strengthener>, Q.: <question>`.
pub fn answer_prompt(s: &Situation, q: &Question, u: UpdateType) -> String {
    format!("{}, TYPE: {}, Q.: {}", s.text(), u.label(), q.text())
}

pub fn generate_question(
    policy: &dyn TextGenerator,
    s: &Situation,
    params: &DecodingParams,
) -> Result<Generated<Question>> {
    params.validate()?;
    let out = policy.generate(&GenerationRequest::new(s.text(), *params))?;
    Ok(Generated {
        value: Question::new(out.text.trim()),
        truncated: out.truncated,
    })
}

pub fn generate_answer(
    answerer: &dyn TextGenerator,
    s: &Situation,
    q: &Question,
    u: UpdateType,
    params: &DecodingParams,
) -> Result<Generated<Answer>> {
    params.validate()?;
    let out = answerer.generate(&GenerationRequest::new(answer_prompt(s, q, u), *params))?;
    let value = Answer::new(out.text.trim(), u)
        .map_err(|_| BackendError::InvalidResponse("answer generator returned empty text".into()))?;
    Ok(Generated {
        value,
        truncated: out.truncated,
    })
}

/// Judges `text`, renormalizing whatever the backend returns.
pub fn judge(oracle: &dyn JudgmentOracle, text: &str) -> Result<JudgmentDistribution> {
    if text.trim().is_empty() {
        return Err(BackendError::InvalidRequest("cannot judge empty text".into()));
    }
    let scores = oracle.raw_scores(text)?;
    JudgmentDistribution::from_scores(scores).map_err(|e| BackendError::InvalidResponse(e.to_string()))
}

pub fn nli(classifier: &dyn NliClassifier, premise: &str, hypothesis: &str) -> Result<NliLabel> {
    if premise.trim().is_empty() || hypothesis.trim().is_empty() {
        return Err(BackendError::InvalidRequest("NLI inputs must be nonempty".into()));
    }
    classifier.classify(premise, hypothesis)
}

pub fn qa_answerable(qa: &dyn QaModel, context: &str, question: &Question) -> Result<bool> {
    qa.answerable(context, question.text())
}

pub fn similarity(scorer: &dyn SimilarityScorer, candidate: &str, reference: &str) -> Result<f64> {
    let v = scorer.similarity(candidate, reference)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(BackendError::InvalidResponse(format!("similarity {v} outside [0, 1]")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::fixture::*;
    use super::*;

    fn s(t: &str) -> Situation {
        Situation::new(t).unwrap()
    }

    #[test]
    fn question_fixture_examples() {
        let policy = ScriptedGenerator::from_pairs([
            ("lie to my friend", "why did you lie to your friend?"),
            ("being anxious sometimes", "What are you anxious about?"),
        ]);
        let p = DecodingParams::default().with_seed(1);
        let q = generate_question(&policy, &s("I lie to my friend"), &p).unwrap();
        assert_eq!(q.value.text(), "why did you lie to your friend?");
        assert_eq!(q.value.wh_start(), Some("why"));
        let q = generate_question(&policy, &s("being anxious sometimes"), &p).unwrap();
        assert_eq!(q.value.text(), "What are you anxious about?");

        let empty = ScriptedGenerator::default();
        assert!(matches!(
            generate_question(&empty, &s("anything"), &p),
            Err(BackendError::Unavailable(_))
        ));
    }

    #[test]
    fn answer_prompt_template() {
        let prompt = answer_prompt(
            &s("It's bad to be a snitch"),
            &Question::new("Why would being a snitch be beneficial?"),
            UpdateType::Weakener,
        );
        assert_eq!(
            prompt,
            "It's bad to be a snitch, TYPE: Weakener, Q.: Why would being a snitch be beneficial?"
        );
    }

    #[test]
    fn answer_fixture_examples() {
        let answerer = ScriptedGenerator::from_pairs([
            (
                "It's bad to be a snitch, TYPE: Weakener, Q.: Why would being a snitch be beneficial?",
                "doing so would save someones life.",
            ),
            (
                "Your kids should be your number one priority, TYPE: Weakener, Q.: What are your kids' ages?",
                "They are adult children.",
            ),
        ]);
        let p = DecodingParams::default();
        let a = generate_answer(
            &answerer,
            &s("It's bad to be a snitch"),
            &Question::new("Why would being a snitch be beneficial?"),
            UpdateType::Weakener,
            &p,
        )
        .unwrap();
        assert_eq!(a.value.text(), "doing so would save someones life.");
        assert_eq!(a.value.update_type(), UpdateType::Weakener);
        let a = generate_answer(
            &answerer,
            &s("Your kids should be your number one priority"),
            &Question::new("What are your kids' ages?"),
            UpdateType::Weakener,
            &p,
        )
        .unwrap();
        assert_eq!(a.value.text(), "They are adult children.");

        let echo = ScriptedGenerator::constant("<FIXED>");
        for u in UpdateType::BOTH {
            let a = generate_answer(&echo, &s("x"), &Question::new("y?"), u, &p).unwrap();
            assert_eq!(a.value.text(), "<FIXED>");
            assert_eq!(a.value.update_type(), u);
        }
    }

    #[test]
    fn judge_examples() {
        let oracle = ScriptedJudge::new().rule(["save someones life"], [0.05, 0.15, 0.80]);
        let j = judge(&oracle, "lying, given that doing so would save someones life.").unwrap();
        assert!((j.good() - 0.8).abs() < 1e-12);
        let j = judge(&oracle, "something unrelated").unwrap();
        assert_eq!(j, JudgmentDistribution::uniform());
        let raw = ScriptedJudge::new().rule(["x"], [2.0, 1.0, 1.0]);
        assert_eq!(judge(&raw, "x").unwrap().as_array(), [0.5, 0.25, 0.25]);
        assert!(judge(&raw, "  ").is_err());
    }

    #[test]
    fn nli_examples() {
        let c = TableNli::new().pair("you lied", "you told the truth", NliLabel::Contradiction);
        assert_eq!(nli(&c, "same text", "same text").unwrap(), NliLabel::Entailment);
        assert_eq!(nli(&c, "you lied", "you told the truth").unwrap(), NliLabel::Contradiction);
        assert_eq!(nli(&c, "a", "b").unwrap(), NliLabel::Neutral);
        assert!(nli(&c, "", "b").is_err());
    }

    #[test]
    fn qa_examples() {
        let qa = SpanQa;
        assert!(qa_answerable(&qa, "Jeff ignores the comment", &Question::new("What comment?")).unwrap());
        assert!(!qa_answerable(&qa, "offering a cup of coffee", &Question::new("When did you offer it?")).unwrap());
        assert!(!qa_answerable(&qa, "making a scene", &Question::new("Why?")).unwrap());
    }

    #[test]
    fn similarity_examples() {
        let sc = TokenF1Similarity;
        assert_eq!(similarity(&sc, "what was the comment", "what was the comment").unwrap(), 1.0);
        assert_eq!(similarity(&sc, "alpha beta", "gamma delta").unwrap(), 0.0);
        // unigram multisets: P = 4/4, R = 4/6, F1 = 2PR/(P+R) = 0.8
        let v = similarity(&sc, "what was the comment", "what was the comment they made").unwrap();
        assert!((v - 0.8).abs() < 1e-12);
    }

    #[test]
    fn decoding_param_validation() {
        let mut p = DecodingParams::default();
        assert_eq!((p.top_p, p.temperature), (0.6, 0.7));
        p.max_tokens = 0;
        assert!(p.validate().is_err());
        let p = DecodingParams { top_p: 0.0, ..Default::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn generation_request_wire_format() {
        let r = GenerationRequest::new("hi", DecodingParams::default().with_seed(3));
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"prompt": "hi", "max_tokens": 32, "top_p": 0.6, "temperature": 0.7, "seed": 3})
        );
    }
}
