//! Bookkeeping behind the response-collection service: HITs, sessions,
//! submissions and an append-only JSONL log.
//!
//! All state changes go through one mutex and are appended to the log before
//! the call returns, so a study can be rebuilt by replaying the log.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Duration, Utc};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boosting::{compose_presentation, BoostError, BoostSpec, PresentationSpec, RESPONSE_WINDOW_SECONDS};
use crate::image::Image;
use crate::model::{ResponseValue, Triplet};
use crate::quality::{
    validate_assignment, AssignmentRecord, Expected, QcError, RejectReason, SequenceKey, Trial, TrialEntry, Validation,
    ValidationRules, ASSIGNMENT_SIZE,
};
use crate::records::{round_time_used, truncate_millis, DcrRecord, TripletRecord};
use crate::rng;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("worker id must be non-empty")]
    InvalidWorker,
    #[error("unknown hit {0}")]
    UnknownHit(String),
    #[error("hit {0} already exists")]
    DuplicateHit(String),
    #[error("invalid hit: {0}")]
    InvalidHit(String),
    #[error("no open session for worker {worker_id} on hit {hit_id}")]
    NoSession { worker_id: String, hit_id: String },
    #[error("worker {worker_id} already submitted hit {hit_id}")]
    Duplicate { worker_id: String, hit_id: String },
    #[error("malformed submission: {0}")]
    Malformed(String),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("log line {line}: {message}")]
    Log { line: usize, message: String },
}

impl From<QcError> for StudyError {
    fn from(e: QcError) -> Self {
        Self::Malformed(e.to_string())
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// What a question asks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuestionItem {
    Triplet {
        triplet: Triplet,
    },
    /// Rating of `test_image` against `reference_image`.
    Dcr {
        level: usize,
        reference_image: String,
        test_image: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub source_id: String,
    pub distortion_type: String,
    #[serde(flatten)]
    pub item: QuestionItem,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presentation: Option<PresentationSpec>,
}

impl Question {
    fn is_triplet(&self) -> bool {
        matches!(self.item, QuestionItem::Triplet { .. })
    }

    fn boost_label(&self) -> String {
        match &self.presentation {
            Some(p) if p.boost != BoostSpec::default() => p.boost.label(),
            _ => String::new(),
        }
    }
}

/// Twenty questions, one of which is a hidden test with a known answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub hit_id: String,
    pub questions: Vec<Question>,
    pub test_index: usize,
    pub test_expected: Expected,
    pub target_assignments: usize,
}

impl Hit {
    pub fn validate(&self) -> Result<(), StudyError> {
        let bad = |m: String| Err(StudyError::InvalidHit(m));
        if self.hit_id.is_empty() {
            return bad("empty hit id".into());
        }
        if self.questions.len() != ASSIGNMENT_SIZE {
            return bad(format!("{} questions, expected {ASSIGNMENT_SIZE}", self.questions.len()));
        }
        if self.test_index >= self.questions.len() {
            return bad("test index out of range".into());
        }
        if self.target_assignments == 0 {
            return bad("target_assignments must be positive".into());
        }
        let triplets = self.questions.iter().filter(|q| q.is_triplet()).count();
        if triplets != 0 && triplets != self.questions.len() {
            return bad("mixes triplet and rating questions".into());
        }
        match (&self.questions[self.test_index].item, self.test_expected) {
            (QuestionItem::Triplet { .. }, Expected::Response(ResponseValue::Left | ResponseValue::Right)) => Ok(()),
            (QuestionItem::Dcr { .. }, Expected::Rating(r)) if r <= 4 => Ok(()),
            _ => bad("test expectation does not fit the test question".into()),
        }
    }

    /// The HIT as shown to workers, without the test answer.
    pub fn public_view(&self) -> HitView {
        HitView { hit_id: self.hit_id.clone(), questions: self.questions.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitView {
    pub hit_id: String,
    pub questions: Vec<Question>,
}

/// Builds a boosted-triplet HIT with the test question at a random position.
/// Returns the HIT and every rendered frame it references.
#[allow(clippy::too_many_arguments)]
pub fn build_triplet_hit(
    hit_id: &str,
    key: &SequenceKey,
    images: &[Image],
    scored: &[Triplet],
    test: (Triplet, ResponseValue),
    boost: &BoostSpec,
    target_assignments: usize,
    seed: u64,
) -> Result<(Hit, Vec<(String, Image)>), StudyError> {
    if scored.len() != ASSIGNMENT_SIZE - 1 {
        return Err(StudyError::InvalidHit(format!(
            "{} scored triplets, expected {}",
            scored.len(),
            ASSIGNMENT_SIZE - 1
        )));
    }
    let test_index = rng::stream(seed, 0).random_range(0..ASSIGNMENT_SIZE);
    let mut triplets = scored.to_vec();
    triplets.insert(test_index, test.0);
    let prefix = format!("{}/{}", key.source_id, key.distortion_type);
    let mut frames: Vec<(String, Image)> = Vec::new();
    let mut questions = Vec::with_capacity(ASSIGNMENT_SIZE);
    for t in triplets {
        let p = compose_presentation(&prefix, t, images, boost)?;
        for (id, img) in p.frames {
            if !frames.iter().any(|(k, _)| *k == id) {
                frames.push((id, img));
            }
        }
        questions.push(Question {
            source_id: key.source_id.clone(),
            distortion_type: key.distortion_type.clone(),
            item: QuestionItem::Triplet { triplet: t },
            presentation: Some(p.spec),
        });
    }
    let hit = Hit {
        hit_id: hit_id.to_string(),
        questions,
        test_index,
        test_expected: Expected::Response(test.1),
        target_assignments,
    };
    hit.validate()?;
    Ok((hit, frames))
}

/// Builds a rating HIT over sequence levels; frames are `{source}/{type}/{level}`.
pub fn build_dcr_hit(
    hit_id: &str,
    key: &SequenceKey,
    scored_levels: &[usize],
    test: (usize, u8),
    target_assignments: usize,
    seed: u64,
) -> Result<Hit, StudyError> {
    if scored_levels.len() != ASSIGNMENT_SIZE - 1 {
        return Err(StudyError::InvalidHit(format!(
            "{} scored levels, expected {}",
            scored_levels.len(),
            ASSIGNMENT_SIZE - 1
        )));
    }
    let test_index = rng::stream(seed, 0).random_range(0..ASSIGNMENT_SIZE);
    let mut levels = scored_levels.to_vec();
    levels.insert(test_index, test.0);
    let prefix = format!("{}/{}", key.source_id, key.distortion_type);
    let questions = levels
        .into_iter()
        .map(|level| Question {
            source_id: key.source_id.clone(),
            distortion_type: key.distortion_type.clone(),
            item: QuestionItem::Dcr {
                level,
                reference_image: format!("{prefix}/0"),
                test_image: format!("{prefix}/{level}"),
            },
            presentation: None,
        })
        .collect();
    let hit = Hit {
        hit_id: hit_id.to_string(),
        questions,
        test_index,
        test_expected: Expected::Rating(test.1),
        target_assignments,
    };
    hit.validate()?;
    Ok(hit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub worker_id: String,
    pub hit_id: String,
    pub issued_at: DateTime<Utc>,
    /// End of each question's response window, back to back from issue time.
    pub deadlines: Vec<DateTime<Utc>>,
}

impl SessionState {
    fn new(worker_id: &str, hit_id: &str, issued_at: DateTime<Utc>) -> Self {
        let window = Duration::milliseconds((RESPONSE_WINDOW_SECONDS * 1000.0) as i64);
        let deadlines = (1..=ASSIGNMENT_SIZE as i32).map(|q| issued_at + window * q).collect();
        Self { worker_id: worker_id.into(), hit_id: hit_id.into(), issued_at, deadlines }
    }
}

/// A HIT handed to a worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuedHit {
    pub hit: HitView,
    pub session: SessionState,
}

/// One answer, in question order. Triplet questions use `response`,
/// rating questions use `rating` (absent when skipped).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubmittedAnswer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<ResponseValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
    pub time_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub worker_id: String,
    pub hit_id: String,
    pub responses: Vec<SubmittedAnswer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SubmitOutcome {
    Accepted { round: usize, records: usize, late: usize },
    Rejected { round: usize, reason: RejectReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// Answers reported later than this are stored as skipped.
    pub max_time_used: f64,
    pub rules: ValidationRules,
    /// Collection rounds per HIT; each rejection starts the next round.
    pub max_rounds: usize,
    /// Whether rejection rules still apply in the final round.
    pub reject_in_last_round: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            max_time_used: RESPONSE_WINDOW_SECONDS,
            rules: ValidationRules::default(),
            max_rounds: 3,
            reject_in_last_round: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudyRecord {
    Triplet(TripletRecord),
    Dcr(DcrRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Hit { hit: Hit },
    Issued { session: SessionState },
    Accepted { worker_id: String, hit_id: String, round: usize, records: Vec<StudyRecord> },
    Rejected { worker_id: String, hit_id: String, round: usize, reason: RejectReason, assignment: AssignmentRecord },
}

/// Which records to export.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportFilter {
    pub source_id: Option<String>,
    pub distortion_type: Option<String>,
    /// Boost label; `plain` selects unboosted trials.
    pub boost: Option<String>,
}

impl ExportFilter {
    fn keeps(&self, source_id: &str, distortion_type: &str, boost: &str) -> bool {
        let boost = if boost.is_empty() { "plain" } else { boost };
        self.source_id.as_deref().is_none_or(|s| s == source_id)
            && self.distortion_type.as_deref().is_none_or(|d| d == distortion_type)
            && self.boost.as_deref().is_none_or(|b| b == boost)
    }
}

#[derive(Debug, Clone)]
struct HitState {
    hit: Hit,
    accepted: usize,
    round: usize,
}

#[derive(Debug, Default)]
struct State {
    hits: Vec<HitState>,
    index: HashMap<String, usize>,
    sessions: BTreeMap<(String, String), SessionState>,
    submitted: HashSet<(String, String)>,
    triplets: Vec<TripletRecord>,
    dcr: Vec<DcrRecord>,
    rejected: Vec<(AssignmentRecord, RejectReason)>,
}

impl State {
    fn apply(&mut self, event: &LogEvent) -> Result<(), StudyError> {
        match event {
            LogEvent::Hit { hit } => {
                if self.index.contains_key(&hit.hit_id) {
                    return Err(StudyError::DuplicateHit(hit.hit_id.clone()));
                }
                self.index.insert(hit.hit_id.clone(), self.hits.len());
                self.hits.push(HitState { hit: hit.clone(), accepted: 0, round: 1 });
            }
            LogEvent::Issued { session } => {
                self.sessions.insert((session.worker_id.clone(), session.hit_id.clone()), session.clone());
            }
            LogEvent::Accepted { worker_id, hit_id, records, .. } => {
                let h = self.hit_mut(hit_id)?;
                h.accepted += 1;
                self.close(worker_id, hit_id);
                for r in records {
                    match r {
                        StudyRecord::Triplet(t) => self.triplets.push(t.clone()),
                        StudyRecord::Dcr(d) => self.dcr.push(d.clone()),
                    }
                }
            }
            LogEvent::Rejected { worker_id, hit_id, reason, assignment, .. } => {
                self.hit_mut(hit_id)?.round += 1;
                self.close(worker_id, hit_id);
                self.rejected.push((assignment.clone(), *reason));
            }
        }
        Ok(())
    }

    fn hit_mut(&mut self, hit_id: &str) -> Result<&mut HitState, StudyError> {
        let i = *self.index.get(hit_id).ok_or_else(|| StudyError::UnknownHit(hit_id.into()))?;
        Ok(&mut self.hits[i])
    }

    fn close(&mut self, worker_id: &str, hit_id: &str) {
        let key = (worker_id.to_string(), hit_id.to_string());
        self.sessions.remove(&key);
        self.submitted.insert(key);
    }
}

/// Snapshot counters for monitoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyStats {
    pub hits: usize,
    pub open_sessions: usize,
    pub accepted_assignments: usize,
    pub rejected_assignments: usize,
    pub triplet_records: usize,
    pub dcr_records: usize,
}

pub struct Study {
    config: StudyConfig,
    clock: Arc<dyn Clock>,
    state: Mutex<State>,
    log: Option<Mutex<File>>,
}

impl std::fmt::Debug for Study {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Study").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Study {
    /// A study without persistence.
    pub fn in_memory(config: StudyConfig, clock: Arc<dyn Clock>) -> Self {
        Self { config, clock, state: Mutex::new(State::default()), log: None }
    }

    /// Opens (or creates) a study backed by the JSONL log at `path`,
    /// replaying existing events.
    pub fn open(path: &Path, config: StudyConfig, clock: Arc<dyn Clock>) -> Result<Self, StudyError> {
        let mut state = State::default();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: LogEvent =
                    serde_json::from_str(&line).map_err(|e| StudyError::Log { line: n + 1, message: e.to_string() })?;
                state.apply(&event).map_err(|e| StudyError::Log { line: n + 1, message: e.to_string() })?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { config, clock, state: Mutex::new(state), log: Some(Mutex::new(file)) })
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Appends to the log, then applies to the in-memory state.
    fn commit(&self, state: &mut State, event: LogEvent) -> Result<(), StudyError> {
        if let Some(log) = &self.log {
            let mut line = serde_json::to_vec(&event).map_err(std::io::Error::from)?;
            line.push(b'\n');
            let mut f = log.lock().unwrap_or_else(|e| e.into_inner());
            f.write_all(&line)?;
            f.flush()?;
        }
        state.apply(&event)
    }

    pub fn add_hit(&self, hit: Hit) -> Result<(), StudyError> {
        hit.validate()?;
        let mut state = self.lock();
        if state.index.contains_key(&hit.hit_id) {
            return Err(StudyError::DuplicateHit(hit.hit_id));
        }
        self.commit(&mut state, LogEvent::Hit { hit })
    }

    pub fn hit(&self, hit_id: &str) -> Option<Hit> {
        let state = self.lock();
        state.index.get(hit_id).map(|&i| state.hits[i].hit.clone())
    }

    /// Returns the worker's open session if any, otherwise the first HIT
    /// (in insertion order) that still needs assignments and that the worker
    /// has not submitted. Availability only drops on accepted submissions.
    pub fn next_assignment(&self, worker_id: &str) -> Result<Option<IssuedHit>, StudyError> {
        if worker_id.trim().is_empty() {
            return Err(StudyError::InvalidWorker);
        }
        let mut state = self.lock();
        if let Some(s) = state.sessions.range((worker_id.to_string(), String::new())..).next() {
            if s.0 .0 == worker_id {
                let session = s.1.clone();
                let hit = state.hits[state.index[&session.hit_id]].hit.public_view();
                return Ok(Some(IssuedHit { hit, session }));
            }
        }
        let Some(h) = state.hits.iter().find(|h| {
            h.accepted < h.hit.target_assignments
                && !state.submitted.contains(&(worker_id.to_string(), h.hit.hit_id.clone()))
        }) else {
            return Ok(None);
        };
        let hit = h.hit.public_view();
        let session = SessionState::new(worker_id, &hit.hit_id, truncate_millis(self.clock.now()));
        self.commit(&mut state, LogEvent::Issued { session: session.clone() })?;
        Ok(Some(IssuedHit { hit, session }))
    }

    /// Validates and stores a submission. Rejected assignments are logged
    /// separately and their slot stays open for another worker.
    pub fn submit_assignment(&self, sub: &Submission) -> Result<SubmitOutcome, StudyError> {
        let mut state = self.lock();
        let key = (sub.worker_id.clone(), sub.hit_id.clone());
        let Some(&idx) = state.index.get(&sub.hit_id) else {
            return Err(StudyError::UnknownHit(sub.hit_id.clone()));
        };
        if state.submitted.contains(&key) {
            return Err(StudyError::Duplicate { worker_id: key.0, hit_id: key.1 });
        }
        if !state.sessions.contains_key(&key) {
            return Err(StudyError::NoSession { worker_id: key.0, hit_id: key.1 });
        }
        let HitState { hit, round, .. } = &state.hits[idx];
        let round = *round;
        if sub.responses.len() != hit.questions.len() {
            return Err(StudyError::Malformed(format!(
                "{} answers for {} questions",
                sub.responses.len(),
                hit.questions.len()
            )));
        }
        let mut late = 0;
        let mut entries = Vec::with_capacity(ASSIGNMENT_SIZE);
        for (n, (q, a)) in hit.questions.iter().zip(&sub.responses).enumerate() {
            if !a.time_used.is_finite() || a.time_used < 0.0 {
                return Err(StudyError::Malformed(format!("answer {n}: invalid time_used {}", a.time_used)));
            }
            let is_late = a.time_used > self.config.max_time_used;
            late += usize::from(is_late);
            let trial = match (&q.item, a.response, a.rating) {
                (QuestionItem::Triplet { triplet }, Some(r), None) => {
                    Trial::Triplet { triplet: *triplet, response: if is_late { ResponseValue::Skipped } else { r } }
                }
                (QuestionItem::Dcr { level, .. }, None, rating) => {
                    if rating.is_some_and(|r| r > 4) {
                        return Err(StudyError::Malformed(format!("answer {n}: rating above 4")));
                    }
                    Trial::Dcr { level: *level, rating: if is_late { None } else { rating } }
                }
                _ => return Err(StudyError::Malformed(format!("answer {n} does not fit its question"))),
            };
            entries.push(TrialEntry {
                source_id: q.source_id.clone(),
                distortion_type: q.distortion_type.clone(),
                trial,
                time_used: round_time_used(a.time_used),
            });
        }
        let assignment = AssignmentRecord {
            worker_id: sub.worker_id.clone(),
            hit_id: sub.hit_id.clone(),
            responses: entries,
            test_question_index: hit.test_index,
            test_expected: hit.test_expected,
        };
        let enforce = round < self.config.max_rounds || self.config.reject_in_last_round;
        if let (Validation::Reject(reason), true) = (validate_assignment(&assignment, &self.config.rules)?, enforce) {
            self.commit(&mut state, LogEvent::Rejected { worker_id: key.0, hit_id: key.1, round, reason, assignment })?;
            return Ok(SubmitOutcome::Rejected { round, reason });
        }
        let now = truncate_millis(self.clock.now());
        let records: Vec<StudyRecord> = assignment
            .responses
            .iter()
            .zip(&hit.questions)
            .enumerate()
            .map(|(n, (e, q))| match e.trial {
                Trial::Triplet { triplet, response } => StudyRecord::Triplet(TripletRecord {
                    source_id: e.source_id.clone(),
                    distortion_type: e.distortion_type.clone(),
                    i: triplet.i,
                    j: triplet.j,
                    k: triplet.k,
                    response,
                    time_stamp: now,
                    time_used: e.time_used,
                    worker_id: sub.worker_id.clone(),
                    hit_id: sub.hit_id.clone(),
                    is_test: n == hit.test_index,
                    boost: q.boost_label(),
                }),
                Trial::Dcr { level, rating } => StudyRecord::Dcr(DcrRecord {
                    source_id: e.source_id.clone(),
                    distortion_type: e.distortion_type.clone(),
                    distortion_level: level,
                    rating,
                    time_stamp: now,
                    time_used: e.time_used,
                    worker_id: sub.worker_id.clone(),
                    hit_id: sub.hit_id.clone(),
                    is_test: n == hit.test_index,
                }),
            })
            .collect();
        let count = records.len();
        self.commit(&mut state, LogEvent::Accepted { worker_id: key.0, hit_id: key.1, round, records })?;
        Ok(SubmitOutcome::Accepted { round, records: count, late })
    }

    pub fn export_triplets(&self, filter: &ExportFilter) -> Vec<TripletRecord> {
        let state = self.lock();
        state.triplets.iter().filter(|r| filter.keeps(&r.source_id, &r.distortion_type, &r.boost)).cloned().collect()
    }

    pub fn export_dcr(&self, filter: &ExportFilter) -> Vec<DcrRecord> {
        let state = self.lock();
        state.dcr.iter().filter(|r| filter.keeps(&r.source_id, &r.distortion_type, "")).cloned().collect()
    }

    pub fn rejected(&self) -> Vec<(AssignmentRecord, RejectReason)> {
        self.lock().rejected.clone()
    }

    pub fn stats(&self) -> StudyStats {
        let s = self.lock();
        StudyStats {
            hits: s.hits.len(),
            open_sessions: s.sessions.len(),
            accepted_assignments: s.hits.iter().map(|h| h.accepted).sum(),
            rejected_assignments: s.rejected.len(),
            triplet_records: s.triplets.len(),
            dcr_records: s.dcr.len(),
        }
    }
}
