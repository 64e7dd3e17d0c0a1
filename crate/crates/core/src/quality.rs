//! Assignment validation and consensus-based outlier removal.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::ordering_score;
use crate::model::{ImpairmentScale, ResponseValue, Triplet};
use crate::reconstruction::{reconstruct, ReconstructionOptions, ResponseSet};

/// Trials per assignment: 19 scored plus one hidden test question.
pub const ASSIGNMENT_SIZE: usize = 20;
pub const MAX_RATING: u8 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QcError {
    #[error("malformed assignment: {0}")]
    Malformed(String),
    #[error("consensus has no value for {0}")]
    MissingConsensus(String),
    #[error("consensus failed in round {round}: {reason}")]
    ConsensusFailed { round: usize, reason: String, rounds: Vec<OutlierRound> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Identifies one image sequence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SequenceKey {
    pub source_id: String,
    pub distortion_type: String,
}

impl SequenceKey {
    pub fn new(source_id: impl Into<String>, distortion_type: impl Into<String>) -> Self {
        Self { source_id: source_id.into(), distortion_type: distortion_type.into() }
    }
}

impl std::fmt::Display for SequenceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.source_id, self.distortion_type)
    }
}

/// A triplet answer or a degradation-category rating (`None` when skipped).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trial {
    Triplet { triplet: Triplet, response: ResponseValue },
    Dcr { level: usize, rating: Option<u8> },
}

impl Trial {
    pub fn is_skipped(&self) -> bool {
        matches!(self, Self::Triplet { response: ResponseValue::Skipped, .. } | Self::Dcr { rating: None, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub source_id: String,
    pub distortion_type: String,
    #[serde(flatten)]
    pub trial: Trial,
    /// Seconds from display onset to the answer.
    pub time_used: f64,
}

impl TrialEntry {
    pub fn key(&self) -> SequenceKey {
        SequenceKey::new(self.source_id.clone(), self.distortion_type.clone())
    }
}

/// Expected answer of the hidden test question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Expected {
    Response(ResponseValue),
    Rating(u8),
}

/// One worker's completed assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub worker_id: String,
    #[serde(default)]
    pub hit_id: String,
    pub responses: Vec<TrialEntry>,
    pub test_question_index: usize,
    pub test_expected: Expected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRules {
    pub max_skips: usize,
    pub require_test_correct: bool,
    pub reject_line_clicking: bool,
}

impl Default for ValidationRules {
    fn default() -> Self {
        Self { max_skips: 3, require_test_correct: true, reject_line_clicking: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooManySkips,
    TestFailed,
    LineClicking,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TooManySkips => "too_many_skips",
            Self::TestFailed => "test_failed",
            Self::LineClicking => "line_clicking",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Validation {
    Accept,
    Reject(RejectReason),
}

fn check_well_formed(a: &AssignmentRecord) -> Result<(), QcError> {
    let bad = |m: String| Err(QcError::Malformed(m));
    if a.worker_id.is_empty() {
        return bad("empty worker id".into());
    }
    if a.responses.len() != ASSIGNMENT_SIZE {
        return bad(format!("{} entries, expected {ASSIGNMENT_SIZE}", a.responses.len()));
    }
    if a.test_question_index >= a.responses.len() {
        return bad(format!("test question index {} out of range", a.test_question_index));
    }
    let triplets = a.responses.iter().filter(|e| matches!(e.trial, Trial::Triplet { .. })).count();
    if triplets != 0 && triplets != a.responses.len() {
        return bad("mixes triplet and rating trials".into());
    }
    for e in &a.responses {
        if !(e.time_used >= 0.0) || !e.time_used.is_finite() {
            return bad(format!("invalid time_used {}", e.time_used));
        }
        match e.trial {
            Trial::Dcr { rating: Some(r), .. } if r > MAX_RATING => {
                return bad(format!("rating {r} above {MAX_RATING}"))
            }
            Trial::Triplet { triplet, .. } if triplet.i == triplet.k => {
                return bad(format!("degenerate triplet {triplet:?}"))
            }
            _ => {}
        }
    }
    match (a.responses[a.test_question_index].trial, a.test_expected) {
        (Trial::Triplet { .. }, Expected::Response(ResponseValue::Left | ResponseValue::Right))
        | (Trial::Dcr { .. }, Expected::Rating(_)) => Ok(()),
        _ => bad("test expectation does not match the test trial".into()),
    }
}

/// Applies the rejection rules to a well-formed assignment.
pub fn validate_assignment(a: &AssignmentRecord, rules: &ValidationRules) -> Result<Validation, QcError> {
    check_well_formed(a)?;
    let skips = a.responses.iter().filter(|e| e.trial.is_skipped()).count();
    if skips > rules.max_skips {
        return Ok(Validation::Reject(RejectReason::TooManySkips));
    }
    if rules.require_test_correct {
        let correct = match (a.responses[a.test_question_index].trial, a.test_expected) {
            (Trial::Triplet { response, .. }, Expected::Response(want)) => response == want,
            (Trial::Dcr { rating, .. }, Expected::Rating(want)) => rating == Some(want),
            _ => false,
        };
        if !correct {
            return Ok(Validation::Reject(RejectReason::TestFailed));
        }
    }
    if rules.reject_line_clicking {
        let answer = |t: &Trial| match *t {
            Trial::Triplet { response, .. } => (Some(response), None),
            Trial::Dcr { rating, .. } => (None, rating),
        };
        let first = answer(&a.responses[0].trial);
        if a.responses.iter().all(|e| answer(&e.trial) == first) {
            return Ok(Validation::Reject(RejectReason::LineClicking));
        }
    }
    Ok(Validation::Accept)
}

/// Complementary weighted agreement between triplet answers and consensus scales.
pub fn assignment_distance_triplet(
    a: &AssignmentRecord,
    consensus: &BTreeMap<SequenceKey, ImpairmentScale>,
) -> Result<f64, QcError> {
    let (mut num, mut den) = (0.0, 0.0);
    for e in &a.responses {
        let Trial::Triplet { triplet: t, response } = e.trial else {
            return Err(QcError::Malformed("rating trial in a triplet assignment".into()));
        };
        if response == ResponseValue::Skipped {
            continue;
        }
        let key = e.key();
        let scale = consensus.get(&key).ok_or_else(|| QcError::MissingConsensus(key.to_string()))?;
        let mu = |s: usize| {
            scale.values.get(s).copied().ok_or_else(|| QcError::MissingConsensus(format!("{key} stimulus {s}")))
        };
        let (mi, mj, mk) = (mu(t.i)?, mu(t.j)?, mu(t.k)?);
        let dl = (mi - mj).abs();
        let dr = (mk - mj).abs();
        let v = match response {
            ResponseValue::Left => f64::from(u8::from(dr >= dl)),
            ResponseValue::Right => f64::from(u8::from(dl >= dr)),
            _ => 0.5,
        };
        let w = (dr - dl).abs();
        num += w * v;
        den += w;
    }
    Ok(if den > 0.0 { 1.0 - num / den } else { 0.0 })
}

/// Mean absolute deviation of ratings from the per-item DMOS.
pub fn assignment_distance_dcr(
    a: &AssignmentRecord,
    dmos: &BTreeMap<(SequenceKey, usize), f64>,
) -> Result<f64, QcError> {
    let (mut sum, mut n) = (0.0, 0usize);
    for e in &a.responses {
        let Trial::Dcr { level, rating } = e.trial else {
            return Err(QcError::Malformed("triplet trial in a rating assignment".into()));
        };
        let Some(r) = rating else { continue };
        let key = (e.key(), level);
        let m = dmos.get(&key).ok_or_else(|| QcError::MissingConsensus(format!("{} level {level}", key.0)))?;
        sum += (f64::from(r) - m).abs();
        n += 1;
    }
    Ok(if n > 0 { sum / n as f64 } else { 0.0 })
}

/// One minus the mean ordering score on baseline triplets.
pub fn assignment_distance_pilot(a: &AssignmentRecord) -> Result<f64, QcError> {
    let (mut sum, mut n) = (0.0, 0usize);
    for e in &a.responses {
        let Trial::Triplet { triplet, response } = e.trial else {
            return Err(QcError::Malformed("rating trial in a pilot assignment".into()));
        };
        if !triplet.is_baseline() {
            return Err(QcError::Malformed(format!("pilot trials must be baseline triplets, got {triplet:?}")));
        }
        if let Some(u) = ordering_score(triplet, response) {
            sum += u;
            n += 1;
        }
    }
    Ok(if n > 0 { 1.0 - sum / n as f64 } else { 0.0 })
}

/// Consensus computed from the currently kept assignments.
#[derive(Debug, Clone, PartialEq)]
pub enum Consensus {
    Scales(BTreeMap<SequenceKey, ImpairmentScale>),
    Dmos(BTreeMap<(SequenceKey, usize), f64>),
    /// Distances need no consensus (ground-truth ordering).
    Ordering,
}

impl Consensus {
    pub fn distance(&self, a: &AssignmentRecord) -> Result<f64, QcError> {
        match self {
            Self::Scales(s) => assignment_distance_triplet(a, s),
            Self::Dmos(d) => assignment_distance_dcr(a, d),
            Self::Ordering => assignment_distance_pilot(a),
        }
    }
}

/// Builds a consensus from a subset of assignments.
pub trait ConsensusBuilder: Sync {
    fn consensus(&self, kept: &[&AssignmentRecord]) -> Result<Consensus, QcError>;
}

/// Per-sequence maximum-likelihood scales from triplet answers.
#[derive(Debug, Clone, Copy, Default)]
pub struct TripletConsensus {
    pub options: ReconstructionOptions,
}

/// Collects triplet answers of `assignments` per sequence.
pub fn responses_by_sequence(assignments: &[&AssignmentRecord]) -> BTreeMap<SequenceKey, ResponseSet> {
    let mut out: BTreeMap<SequenceKey, ResponseSet> = BTreeMap::new();
    for a in assignments {
        for e in &a.responses {
            if let Trial::Triplet { triplet, response } = e.trial {
                let set = out.entry(e.key()).or_default();
                set.stimulus_count = set.stimulus_count.max(triplet.max_index() + 1);
                set.records.push((triplet, response));
            }
        }
    }
    out
}

impl ConsensusBuilder for TripletConsensus {
    fn consensus(&self, kept: &[&AssignmentRecord]) -> Result<Consensus, QcError> {
        let mut scales = BTreeMap::new();
        for (key, set) in responses_by_sequence(kept) {
            let rec = reconstruct(&set, &self.options).map_err(|e| QcError::MissingConsensus(format!("{key}: {e}")))?;
            scales.insert(key, rec.scale);
        }
        Ok(Consensus::Scales(scales))
    }
}

/// Mean rating per sequence level.
#[derive(Debug, Clone, Copy, Default)]
pub struct DmosConsensus;

impl ConsensusBuilder for DmosConsensus {
    fn consensus(&self, kept: &[&AssignmentRecord]) -> Result<Consensus, QcError> {
        let mut acc: BTreeMap<(SequenceKey, usize), (f64, usize)> = BTreeMap::new();
        for a in kept {
            for e in &a.responses {
                if let Trial::Dcr { level, rating: Some(r) } = e.trial {
                    let slot = acc.entry((e.key(), level)).or_default();
                    slot.0 += f64::from(r);
                    slot.1 += 1;
                }
            }
        }
        Ok(Consensus::Dmos(acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()))
    }
}

/// Ground-truth ordering; distances do not depend on the kept set.
#[derive(Debug, Clone, Copy, Default)]
pub struct PilotConsensus;

impl ConsensusBuilder for PilotConsensus {
    fn consensus(&self, _kept: &[&AssignmentRecord]) -> Result<Consensus, QcError> {
        Ok(Consensus::Ordering)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierRound {
    pub round: usize,
    /// Distance of every assignment, in input order.
    pub distances: Vec<f64>,
    /// Indices kept after this round, ascending.
    pub kept: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierResult {
    /// Indices of kept assignments, ascending.
    pub kept: Vec<usize>,
    pub rounds: Vec<OutlierRound>,
    /// Rounds that changed the kept set.
    pub iterations: usize,
    pub converged: bool,
}

impl OutlierResult {
    pub fn removed(&self, total: usize) -> Vec<usize> {
        (0..total).filter(|i| self.kept.binary_search(i).is_err()).collect()
    }
}

/// Iteratively keeps the `⌈keep_fraction·M⌉` assignments closest to the
/// consensus of the previously kept ones until the kept set is stable.
pub fn remove_outliers(
    assignments: &[AssignmentRecord],
    keep_fraction: f64,
    builder: &dyn ConsensusBuilder,
    max_rounds: usize,
) -> Result<OutlierResult, QcError> {
    if !(keep_fraction > 0.0 && keep_fraction < 1.0) {
        return Err(QcError::InvalidArgument(format!("keep fraction {keep_fraction} not in (0, 1)")));
    }
    if assignments.is_empty() || max_rounds == 0 {
        return Err(QcError::InvalidArgument("need assignments and at least one round".into()));
    }
    let m = assignments.len();
    let keep = ((keep_fraction * m as f64).ceil() as usize).clamp(1, m);
    let mut kept: Vec<usize> = (0..m).collect();
    let mut rounds = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for round in 1..=max_rounds {
        let subset: Vec<&AssignmentRecord> = kept.iter().map(|&i| &assignments[i]).collect();
        let fail = |reason: String, rounds: &Vec<OutlierRound>| QcError::ConsensusFailed {
            round,
            reason,
            rounds: rounds.clone(),
        };
        let consensus = builder.consensus(&subset).map_err(|e| fail(e.to_string(), &rounds))?;
        let distances: Vec<f64> = assignments
            .par_iter()
            .map(|a| consensus.distance(a))
            .collect::<Result<_, _>>()
            .map_err(|e| fail(e.to_string(), &rounds))?;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            distances[a]
                .total_cmp(&distances[b])
                .then_with(|| assignments[a].worker_id.cmp(&assignments[b].worker_id))
                .then(a.cmp(&b))
        });
        let mut next: Vec<usize> = order[..keep].to_vec();
        next.sort_unstable();
        let stable = next == kept;
        rounds.push(OutlierRound { round, distances, kept: next.clone() });
        if stable {
            converged = true;
            break;
        }
        iterations += 1;
        kept = next;
    }
    Ok(OutlierResult { kept, rounds, iterations, converged })
}

/// CSV with one row per removed or rejected assignment.
///
/// Columns: `worker_id,hit_id,reason,round,distance`.
pub fn outlier_report_csv(
    assignments: &[AssignmentRecord],
    result: &OutlierResult,
    rejected: &[(AssignmentRecord, RejectReason)],
) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["worker_id", "hit_id", "reason", "round", "distance"])?;
    for (a, reason) in rejected {
        w.write_record([a.worker_id.as_str(), a.hit_id.as_str(), reason.as_str(), "0", ""])?;
    }
    if let Some(last) = result.rounds.last() {
        for i in result.removed(assignments.len()) {
            // First round after which the assignment stayed out.
            let round = result
                .rounds
                .iter()
                .rev()
                .take_while(|r| r.kept.binary_search(&i).is_err())
                .last()
                .map_or(last.round, |r| r.round);
            let a = &assignments[i];
            w.write_record([
                a.worker_id.as_str(),
                a.hit_id.as_str(),
                "outlier",
                &round.to_string(),
                &format!("{:.6}", last.distances[i]),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScaleUnit;
    use ResponseValue::*;

    fn entry(t: (usize, usize, usize), r: ResponseValue) -> TrialEntry {
        TrialEntry {
            source_id: "src".into(),
            distortion_type: "lens_blur".into(),
            trial: Trial::Triplet { triplet: Triplet::new(t.0, t.1, t.2), response: r },
            time_used: 2.0,
        }
    }

    fn assignment(responses: Vec<TrialEntry>) -> AssignmentRecord {
        AssignmentRecord {
            worker_id: "w".into(),
            hit_id: "h".into(),
            responses,
            test_question_index: 0,
            test_expected: Expected::Response(Left),
        }
    }

    fn varied() -> Vec<TrialEntry> {
        (0..20).map(|n| entry((1 + n % 5, 0, 7), if n % 3 == 1 { Right } else { Left })).collect()
    }

    #[test]
    fn validation_examples() {
        let rules = ValidationRules::default();
        assert_eq!(validate_assignment(&assignment(varied()), &rules).unwrap(), Validation::Accept);
        let mut skips = varied();
        for e in skips.iter_mut().skip(1).take(4) {
            e.trial = Trial::Triplet { triplet: Triplet::new(1, 0, 2), response: Skipped };
        }
        assert_eq!(
            validate_assignment(&assignment(skips), &rules).unwrap(),
            Validation::Reject(RejectReason::TooManySkips)
        );
        let same: Vec<_> = (0..20).map(|_| entry((1, 0, 5), Left)).collect();
        assert_eq!(
            validate_assignment(&assignment(same), &rules).unwrap(),
            Validation::Reject(RejectReason::LineClicking)
        );
        let mut unsure = varied();
        unsure[0] = entry((1, 0, 7), NotSure);
        assert_eq!(
            validate_assignment(&assignment(unsure), &rules).unwrap(),
            Validation::Reject(RejectReason::TestFailed)
        );
        assert!(matches!(
            validate_assignment(&assignment(varied()[..19].to_vec()), &rules),
            Err(QcError::Malformed(_))
        ));
    }

    fn consensus(values: Vec<f64>) -> BTreeMap<SequenceKey, ImpairmentScale> {
        BTreeMap::from([(
            SequenceKey::new("src", "lens_blur"),
            ImpairmentScale { values, anchor_index: 0, unit: ScaleUnit::Jnd },
        )])
    }

    #[test]
    fn triplet_distance_examples() {
        let c = consensus((0..8).map(f64::from).collect());
        let agree: Vec<_> =
            (0..20).map(|n| if n % 2 == 0 { entry((1, 0, 6), Left) } else { entry((5, 0, 2), Right) }).collect();
        assert_eq!(assignment_distance_triplet(&assignment(agree.clone()), &c).unwrap(), 0.0);
        let oppose: Vec<_> = agree
            .iter()
            .map(|e| {
                let mut e = e.clone();
                if let Trial::Triplet { response, .. } = &mut e.trial {
                    *response = response.mirrored();
                }
                e
            })
            .collect();
        assert_eq!(assignment_distance_triplet(&assignment(oppose), &c).unwrap(), 1.0);
        let unsure: Vec<_> = (0..20).map(|_| entry((1, 0, 6), NotSure)).collect();
        assert_eq!(assignment_distance_triplet(&assignment(unsure), &c).unwrap(), 0.5);
        let flat = consensus(vec![0.0; 8]);
        assert_eq!(assignment_distance_triplet(&assignment(agree), &flat).unwrap(), 0.0);
    }

    #[test]
    fn dcr_distance_examples() {
        let key = SequenceKey::new("src", "lens_blur");
        let dcr = |level, rating| TrialEntry {
            source_id: "src".into(),
            distortion_type: "lens_blur".into(),
            trial: Trial::Dcr { level, rating },
            time_used: 1.0,
        };
        let dmos = BTreeMap::from([((key.clone(), 1), 1.5), ((key.clone(), 2), 3.0), ((key.clone(), 3), 1.0)]);
        let one = assignment(vec![dcr(1, Some(4))]);
        assert_eq!(assignment_distance_dcr(&one, &dmos).unwrap(), 2.5);
        let two = assignment(vec![dcr(2, Some(4)), dcr(3, Some(0))]);
        assert_eq!(assignment_distance_dcr(&two, &dmos).unwrap(), 1.0);
        let missing = assignment(vec![dcr(9, Some(0))]);
        assert!(assignment_distance_dcr(&missing, &dmos).is_err());
    }

    #[test]
    fn pilot_distance_examples() {
        let mut v = Vec::new();
        v.extend((0..10).map(|_| entry((1, 0, 3), Left)));
        v.extend((0..5).map(|_| entry((1, 0, 3), Right)));
        v.extend((0..5).map(|_| entry((1, 0, 3), NotSure)));
        assert!((assignment_distance_pilot(&assignment(v)).unwrap() - 0.375).abs() < 1e-12);
        let general = assignment(vec![entry((1, 2, 3), Left)]);
        assert!(assignment_distance_pilot(&general).is_err());
    }

    #[test]
    fn identical_assignments_converge_immediately() {
        let all: Vec<_> =
            (0..10).map(|n| AssignmentRecord { worker_id: format!("w{n}"), ..assignment(varied()) }).collect();
        let res = remove_outliers(&all, 0.75, &PilotConsensus, 10).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert_eq!(res.kept, (0..8).collect::<Vec<_>>());
        let csv = outlier_report_csv(&all, &res, &[]).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("w8,h,outlier,1,"));
    }

    #[test]
    fn assignment_json_round_trip() {
        let a = assignment(varied());
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<AssignmentRecord>(&json).unwrap(), a);
    }
}
