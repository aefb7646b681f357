//! The interactive judgment loop.
//!
//! A session starts from a situation: it is judged and a first clarification
//! question is asked. Each user answer is fused into the current situation,
//! the fused text is judged, and, until the turn limit is reached, a new
//! question is generated from the fused text. Sessions that reach the limit
//! are terminal and never change again.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{self, BackendError, DecodingParams, JudgmentOracle, TextGenerator};
use crate::defeasibility::fuse;
use crate::divergence::argmax_judgment;
use crate::domain::{Answer, JudgmentClass, JudgmentDistribution, Question, Situation, UpdateType, UpdatedSituation};

pub const DEFAULT_TURN_LIMIT: usize = 3;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("situation text is empty")]
    EmptySituation,
    #[error("answer text is empty")]
    EmptyAnswer,
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session already used all {0} turns")]
    TurnLimit(usize),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub question: Question,
    pub user_answer: String,
    pub fused: UpdatedSituation,
    pub judgment: JudgmentDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub base: Situation,
    pub base_judgment: JudgmentDistribution,
    pub turns: Vec<Turn>,
    /// The base text before any turn, then the latest fused text.
    pub current_situation: String,
    /// Question awaiting an answer; `None` once terminal.
    pub question: Option<Question>,
    pub turn_limit: usize,
    pub terminal: bool,
}

impl SessionState {
    /// Judgment of the current situation.
    pub fn judgment(&self) -> &JudgmentDistribution {
        self.turns.last().map(|t| &t.judgment).unwrap_or(&self.base_judgment)
    }

    pub fn check_invariants(&self) -> bool {
        let current_ok = match self.turns.last() {
            None => self.current_situation == self.base.text(),
            Some(t) => self.current_situation == t.fused.text,
        };
        let terminal_ok = self.terminal == (self.turns.len() == self.turn_limit) && self.terminal == self.question.is_none();
        current_ok && terminal_ok && self.turns.len() <= self.turn_limit
    }
}

/// Tags a user answer by how it moved the judgment: toward the previous
/// verdict (or not at all) it strengthens, otherwise it weakens. Movement is
/// measured on `p_good - p_bad`.
pub fn user_update_type(previous: &JudgmentDistribution, updated: &JudgmentDistribution) -> UpdateType {
    let lean = |d: &JudgmentDistribution| d.good() - d.bad();
    let delta = lean(updated) - lean(previous);
    let strengthens = match argmax_judgment(previous) {
        JudgmentClass::Bad => delta <= 0.0,
        JudgmentClass::Ok | JudgmentClass::Good => delta >= 0.0,
    };
    if strengthens {
        UpdateType::Strengthener
    } else {
        UpdateType::Weakener
    }
}

/// Backends and settings for the loop.
#[derive(Clone)]
pub struct InteractiveJudge {
    pub questioner: Arc<dyn TextGenerator>,
    pub fusion: Option<Arc<dyn TextGenerator>>,
    pub oracle: Arc<dyn JudgmentOracle>,
    pub decoding: DecodingParams,
    pub turn_limit: usize,
}

impl InteractiveJudge {
    pub fn new(questioner: Arc<dyn TextGenerator>, oracle: Arc<dyn JudgmentOracle>) -> Self {
        Self {
            questioner,
            fusion: None,
            oracle,
            decoding: DecodingParams::default(),
            turn_limit: DEFAULT_TURN_LIMIT,
        }
    }

    pub fn with_fusion(mut self, fusion: Arc<dyn TextGenerator>) -> Self {
        self.fusion = Some(fusion);
        self
    }

    pub fn with_decoding(mut self, decoding: DecodingParams) -> Self {
        self.decoding = decoding;
        self
    }

    pub fn with_turn_limit(mut self, limit: usize) -> Self {
        self.turn_limit = limit.max(1);
        self
    }

    fn ask(&self, situation: &str) -> Result<Question, SessionError> {
        let s = Situation::new(situation).map_err(|_| SessionError::EmptySituation)?;
        let q = backends::generate_question(self.questioner.as_ref(), &s, &self.decoding)?.value;
        if q.text().is_empty() {
            return Err(BackendError::InvalidResponse("question generator returned empty text".into()).into());
        }
        Ok(q)
    }

    pub fn start(&self, session_id: impl Into<String>, situation: &str) -> Result<SessionState, SessionError> {
        let base = Situation::new(situation.trim()).map_err(|_| SessionError::EmptySituation)?;
        let base_judgment = backends::judge(self.oracle.as_ref(), base.text())?;
        let question = self.ask(base.text())?;
        Ok(SessionState {
            session_id: session_id.into(),
            current_situation: base.text().to_string(),
            base,
            base_judgment,
            turns: Vec::new(),
            question: Some(question),
            turn_limit: self.turn_limit,
            terminal: false,
        })
    }

    /// Fuses and judges one answer. The state is only modified on success.
    pub fn answer(&self, state: &mut SessionState, answer: &str) -> Result<(), SessionError> {
        if state.terminal || state.turns.len() >= state.turn_limit {
            return Err(SessionError::TurnLimit(state.turn_limit));
        }
        let question = state.question.clone().expect("non-terminal session has a question");
        let (fused, judgment) = self.fuse_and_judge(&state.current_situation, &question, answer, state.judgment())?;
        let done = state.turns.len() + 1 == state.turn_limit;
        let next = if done { None } else { Some(self.ask(&fused.text)?) };
        state.current_situation = fused.text.clone();
        state.turns.push(Turn {
            question,
            user_answer: answer.trim().to_string(),
            fused,
            judgment,
        });
        state.question = next;
        state.terminal = done;
        Ok(())
    }

    fn fuse_and_judge(
        &self,
        current: &str,
        question: &Question,
        answer: &str,
        previous: &JudgmentDistribution,
    ) -> Result<(UpdatedSituation, JudgmentDistribution), SessionError> {
        let s = Situation::new(current).map_err(|_| SessionError::EmptySituation)?;
        // Fusion does not depend on the update type; it is set once judged.
        let a = Answer::new(answer.trim(), UpdateType::Strengthener).map_err(|_| SessionError::EmptyAnswer)?;
        let mut fused = fuse(&s, question, &a, self.fusion.as_deref(), &self.decoding);
        let judgment = backends::judge(self.oracle.as_ref(), &fused.text)?;
        fused.answer = a.with_update_type(user_update_type(previous, &judgment));
        Ok((fused, judgment))
    }

    /// Re-runs fusion and judgment over the recorded turns and reports whether
    /// every fused text and judgment comes out the same.
    pub fn replay(&self, state: &SessionState) -> Result<bool, SessionError> {
        let mut current = state.base.text().to_string();
        let mut previous = backends::judge(self.oracle.as_ref(), &current)?;
        if previous != state.base_judgment {
            return Ok(false);
        }
        for t in &state.turns {
            let (fused, judgment) = self.fuse_and_judge(&current, &t.question, &t.user_answer, &previous)?;
            if fused != t.fused || judgment != t.judgment {
                return Ok(false);
            }
            current = fused.text;
            previous = judgment;
        }
        Ok(true)
    }
}

/// In-memory sessions. Requests on one session are serialized by its own
/// lock; different sessions proceed independently. Terminal sessions are
/// appended to an optional JSONL file.
pub struct SessionManager {
    judge: InteractiveJudge,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionState>>>>,
    persist: Option<PathBuf>,
}

impl SessionManager {
    pub fn new(judge: InteractiveJudge) -> Self {
        Self {
            judge,
            sessions: Mutex::new(HashMap::new()),
            persist: None,
        }
    }

    pub fn with_persistence(mut self, path: impl Into<PathBuf>) -> Self {
        self.persist = Some(path.into());
        self
    }

    pub fn judge(&self) -> &InteractiveJudge {
        &self.judge
    }

    pub fn create_session(&self, situation: &str) -> Result<SessionState, SessionError> {
        let id = uuid::Uuid::new_v4().to_string();
        let state = self.judge.start(id.clone(), situation)?;
        self.sessions
            .lock()
            .expect("session map lock")
            .insert(id, Arc::new(Mutex::new(state.clone())));
        Ok(state)
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<SessionState>>, SessionError> {
        self.sessions
            .lock()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    pub fn answer_turn(&self, id: &str, answer: &str) -> Result<SessionState, SessionError> {
        let slot = self.slot(id)?;
        let mut state = slot.lock().expect("session lock");
        self.judge.answer(&mut state, answer)?;
        if state.terminal {
            if let Some(path) = &self.persist {
                append_session(path, &state)?;
            }
        }
        Ok(state.clone())
    }

    pub fn get_session(&self, id: &str) -> Result<SessionState, SessionError> {
        Ok(self.slot(id)?.lock().expect("session lock").clone())
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn append_session(path: impl AsRef<Path>, state: &SessionState) -> Result<(), SessionError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(state)?;
    line.push(b'\n');
    f.write_all(&line)?;
    Ok(())
}

pub fn load_sessions(path: impl AsRef<Path>) -> Result<Vec<SessionState>, SessionError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
