//! Domain types shared across the crate.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

/// Tolerance on the sum of an incoming distribution before it is rejected.
pub const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("probability component {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("probabilities sum to {0}, expected 1")]
    BadSum(f64),
    #[error("raw judgment scores must be finite, non-negative and not all zero: {0:?}")]
    BadScores([f64; 3]),
}

/// A free-text social or moral situation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SituationRepr", into = "SituationRepr")]
pub struct Situation {
    text: String,
    default_judgment: Option<JudgmentClass>,
}

/// A bare string, or `{text, default_judgment}` when a judgment is attached.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SituationRepr {
    Text(String),
    Full {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default_judgment: Option<JudgmentClass>,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("situation text is empty")]
pub struct EmptySituation;

impl Situation {
    pub fn new(text: impl Into<String>) -> Result<Self, EmptySituation> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(EmptySituation);
        }
        Ok(Self {
            text,
            default_judgment: None,
        })
    }

    pub fn with_default_judgment(mut self, judgment: JudgmentClass) -> Self {
        self.default_judgment = Some(judgment);
        self
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn default_judgment(&self) -> Option<JudgmentClass> {
        self.default_judgment
    }
}

impl TryFrom<SituationRepr> for Situation {
    type Error = EmptySituation;

    fn try_from(repr: SituationRepr) -> Result<Self, Self::Error> {
        match repr {
            SituationRepr::Text(text) => Situation::new(text),
            SituationRepr::Full { text, default_judgment } => {
                let mut s = Situation::new(text)?;
                s.default_judgment = default_judgment;
                Ok(s)
            }
        }
    }
}

impl From<Situation> for SituationRepr {
    fn from(s: Situation) -> Self {
        match s.default_judgment {
            None => Self::Text(s.text),
            judgment => Self::Full {
                text: s.text,
                default_judgment: judgment,
            },
        }
    }
}

impl fmt::Display for Situation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// The three judgment classes. The derived order (`Bad < Ok < Good`) is the
/// tie-breaking order used by [`crate::argmax_judgment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgmentClass {
    Bad,
    Ok,
    Good,
}

impl JudgmentClass {
    pub const ALL: [JudgmentClass; 3] = [JudgmentClass::Bad, JudgmentClass::Ok, JudgmentClass::Good];

    pub fn as_str(self) -> &'static str {
        match self {
            JudgmentClass::Bad => "bad",
            JudgmentClass::Ok => "ok",
            JudgmentClass::Good => "good",
        }
    }
}

impl fmt::Display for JudgmentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A probability distribution over {bad, ok, good}.
///
/// Construction validates each component and the sum (within
/// [`SUM_TOLERANCE`]) and then renormalizes so the stored components sum to 1
/// up to rounding. Input that already sums to 1 up to rounding is kept as is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionRepr", into = "DistributionRepr")]
pub struct JudgmentDistribution {
    probs: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct DistributionRepr {
    bad: f64,
    ok: f64,
    good: f64,
}

impl JudgmentDistribution {
    pub fn new(bad: f64, ok: f64, good: f64) -> Result<Self, DistributionError> {
        Self::from_array([bad, ok, good])
    }

    pub fn from_array(probs: [f64; 3]) -> Result<Self, DistributionError> {
        for &p in &probs {
            if !p.is_finite() || !(-SUM_TOLERANCE..=1.0 + SUM_TOLERANCE).contains(&p) {
                return Err(DistributionError::OutOfRange(p));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistributionError::BadSum(sum));
        }
        let probs = probs.map(|p| p.max(0.0));
        // Already normalized up to rounding: keep the exact values so that
        // serialization round-trips bit for bit.
        if (probs.iter().sum::<f64>() - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self { probs });
        }
        Ok(Self::renormalized(probs))
    }

    /// Normalizes raw non-negative class scores by their sum.
    pub fn from_scores(scores: [f64; 3]) -> Result<Self, DistributionError> {
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(DistributionError::BadScores(scores));
        }
        let sum: f64 = scores.iter().sum();
        if sum <= 0.0 {
            return Err(DistributionError::BadScores(scores));
        }
        if (sum - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self { probs: scores });
        }
        Ok(Self::renormalized(scores))
    }

    pub fn uniform() -> Self {
        Self {
            probs: [1.0 / 3.0; 3],
        }
    }

    /// All mass on one class.
    pub fn point(class: JudgmentClass) -> Self {
        let mut probs = [0.0; 3];
        probs[class as usize] = 1.0;
        Self { probs }
    }

    fn renormalized(probs: [f64; 3]) -> Self {
        let sum: f64 = probs.iter().sum();
        Self {
            probs: probs.map(|p| p / sum),
        }
    }

    pub fn bad(&self) -> f64 {
        self.probs[0]
    }

    pub fn ok(&self) -> f64 {
        self.probs[1]
    }

    pub fn good(&self) -> f64 {
        self.probs[2]
    }

    pub fn prob(&self, class: JudgmentClass) -> f64 {
        self.probs[class as usize]
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.probs
    }
}

impl TryFrom<DistributionRepr> for JudgmentDistribution {
    type Error = DistributionError;

    fn try_from(r: DistributionRepr) -> Result<Self, Self::Error> {
        Self::new(r.bad, r.ok, r.good)
    }
}

impl From<JudgmentDistribution> for DistributionRepr {
    fn from(d: JudgmentDistribution) -> Self {
        Self {
            bad: d.probs[0],
            ok: d.probs[1],
            good: d.probs[2],
        }
    }
}

/// A clarification question. `wh_start` is derived from the text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct Question {
    text: String,
    wh_start: Option<String>,
}

impl Question {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let wh_start = text::first_token(&text);
        Self { text, wh_start }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Lowercased first token with punctuation stripped, if any.
    pub fn wh_start(&self) -> Option<&str> {
        self.wh_start.as_deref()
    }
}

impl From<String> for Question {
    fn from(text: String) -> Self {
        Question::new(text)
    }
}

impl From<&str> for Question {
    fn from(text: &str) -> Self {
        Question::new(text)
    }
}

impl From<Question> for String {
    fn from(q: Question) -> Self {
        q.text
    }
}

impl fmt::Display for Question {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateType {
    Weakener,
    Strengthener,
}

impl UpdateType {
    pub const BOTH: [UpdateType; 2] = [UpdateType::Weakener, UpdateType::Strengthener];

    /// Capitalized label used in backend prompts.
    pub fn label(self) -> &'static str {
        match self {
            UpdateType::Weakener => "Weakener",
            UpdateType::Strengthener => "Strengthener",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            UpdateType::Weakener => UpdateType::Strengthener,
            UpdateType::Strengthener => UpdateType::Weakener,
        }
    }
}

impl fmt::Display for UpdateType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateType::Weakener => "weakener",
            UpdateType::Strengthener => "strengthener",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("answer text is empty")]
pub struct EmptyAnswer;

/// A (simulated or user-provided) answer tagged with the update it represents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Answer {
    text: String,
    update_type: UpdateType,
}

impl Answer {
    pub fn new(text: impl Into<String>, update_type: UpdateType) -> Result<Self, EmptyAnswer> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(EmptyAnswer);
        }
        Ok(Self { text, update_type })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn update_type(&self) -> UpdateType {
        self.update_type
    }

    pub fn with_update_type(mut self, update_type: UpdateType) -> Self {
        self.update_type = update_type;
        self
    }
}

/// A situation rewritten to include the context supplied by an answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdatedSituation {
    pub text: String,
    pub situation: Situation,
    pub question: Question,
    pub answer: Answer,
}
