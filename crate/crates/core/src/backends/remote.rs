//! JSON-over-HTTP client for remotely served models.
//!
//! Every endpoint is a `POST` under the configured base URL:
//!
//! | path          | request                         | response                          |
//! |---------------|---------------------------------|-----------------------------------|
//! | `/generate`   | [`GenerationRequest`]           | `{"text", "truncated"?}`          |
//! | `/judge`      | `{"text"}`                      | `{"bad": x, "ok": y, "good": z}`  |
//! | `/nli`        | `{"premise", "hypothesis"}`     | `{"label"}`                       |
//! | `/qa`         | `{"context", "question"}`       | `{"answerable"}`                  |
//! | `/similarity` | `{"candidate", "reference"}`    | `{"score"}`                       |
//! | `/relevance`  | `{"situation", "question"}`     | `{"probability"}`                 |
//!
//! Judgment scores are renormalized by [`super::judge`] whatever the server sends.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, Generation, GenerationRequest, JudgmentOracle, NliClassifier, NliLabel, QaModel,
    RelevanceScorer, Result, SimilarityScorer, TextGenerator,
};

#[derive(Debug, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub bad: f64,
    pub ok: f64,
    pub good: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NliRequest {
    pub premise: String,
    pub hypothesis: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NliResponse {
    pub label: NliLabel,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QaRequest {
    pub context: String,
    pub question: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QaResponse {
    pub answerable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimilarityRequest {
    pub candidate: String,
    pub reference: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimilarityResponse {
    pub score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RelevanceRequest {
    pub situation: String,
    pub question: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RelevanceResponse {
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_timeout(base_url, Duration::from_secs(60))
    }

    pub fn with_timeout(base_url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{}", self.base_url, path);
        let resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| BackendError::Unavailable(format!("POST {url}: {e}")))?;
        resp.into_body()
            .read_json()
            .map_err(|e| BackendError::InvalidResponse(format!("POST {url}: {e}")))
    }
}

impl TextGenerator for RemoteBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation> {
        self.post("/generate", request)
    }
}

impl JudgmentOracle for RemoteBackend {
    fn raw_scores(&self, text: &str) -> Result<[f64; 3]> {
        let r: JudgeResponse = self.post("/judge", &JudgeRequest { text: text.to_owned() })?;
        Ok([r.bad, r.ok, r.good])
    }
}

impl NliClassifier for RemoteBackend {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliLabel> {
        let r: NliResponse = self.post(
            "/nli",
            &NliRequest {
                premise: premise.to_owned(),
                hypothesis: hypothesis.to_owned(),
            },
        )?;
        Ok(r.label)
    }
}

impl QaModel for RemoteBackend {
    fn answerable(&self, context: &str, question: &str) -> Result<bool> {
        let r: QaResponse = self.post(
            "/qa",
            &QaRequest {
                context: context.to_owned(),
                question: question.to_owned(),
            },
        )?;
        Ok(r.answerable)
    }
}

impl SimilarityScorer for RemoteBackend {
    fn similarity(&self, candidate: &str, reference: &str) -> Result<f64> {
        let r: SimilarityResponse = self.post(
            "/similarity",
            &SimilarityRequest {
                candidate: candidate.to_owned(),
                reference: reference.to_owned(),
            },
        )?;
        Ok(r.score)
    }
}

impl RelevanceScorer for RemoteBackend {
    fn relevance(&self, situation: &str, question: &str) -> Result<f64> {
        let r: RelevanceResponse = self.post(
            "/relevance",
            &RelevanceRequest {
                situation: situation.to_owned(),
                question: question.to_owned(),
            },
        )?;
        Ok(r.probability)
    }
}
