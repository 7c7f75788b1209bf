//! Shared protocol vocabulary: task identities, difficulty tiers, problem
//! instances, verdicts and lineages.
//!
//! Every type here is an immutable value object once built. The on-disk
//! encoding is plain JSON with snake_case field names; enumerations are
//! strings (`"T1"`, `"easy"`). Answer indices are 1-based.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ParseEnumError;

/// One of the seven text-anomaly task types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskTypeId {
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
}

impl TaskTypeId {
    pub const ALL: [TaskTypeId; 7] = [
        TaskTypeId::T1,
        TaskTypeId::T2,
        TaskTypeId::T3,
        TaskTypeId::T4,
        TaskTypeId::T5,
        TaskTypeId::T6,
        TaskTypeId::T7,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskTypeId::T1 => "T1",
            TaskTypeId::T2 => "T2",
            TaskTypeId::T3 => "T3",
            TaskTypeId::T4 => "T4",
            TaskTypeId::T5 => "T5",
            TaskTypeId::T6 => "T6",
            TaskTypeId::T7 => "T7",
        }
    }

    /// Zero-based position in [`TaskTypeId::ALL`].
    pub fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TaskTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskTypeId {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskTypeId::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ParseEnumError::new("task type", s))
    }
}

/// Difficulty tier along one problem lineage. Ordered `Easy < Hard < Extreme < Impossible`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifficultyTier {
    Easy,
    Hard,
    Extreme,
    Impossible,
}

impl DifficultyTier {
    pub const ALL: [DifficultyTier; 4] = [
        DifficultyTier::Easy,
        DifficultyTier::Hard,
        DifficultyTier::Extreme,
        DifficultyTier::Impossible,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DifficultyTier::Easy => "easy",
            DifficultyTier::Hard => "hard",
            DifficultyTier::Extreme => "extreme",
            DifficultyTier::Impossible => "impossible",
        }
    }
}

/// Successor on the escalation ladder; `None` past `Impossible`.
pub fn next_tier(t: DifficultyTier) -> Option<DifficultyTier> {
    match t {
        DifficultyTier::Easy => Some(DifficultyTier::Hard),
        DifficultyTier::Hard => Some(DifficultyTier::Extreme),
        DifficultyTier::Extreme => Some(DifficultyTier::Impossible),
        DifficultyTier::Impossible => None,
    }
}

impl fmt::Display for DifficultyTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DifficultyTier {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DifficultyTier::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ParseEnumError::new("difficulty tier", s))
    }
}

/// Expected answer: a 1-based position, or a boolean for T2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKey {
    Index(u32),
    Flag(bool),
}

impl fmt::Display for AnswerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerKey::Index(i) => write!(f, "{i}"),
            AnswerKey::Flag(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemMeta {
    pub source: String,
    pub topic: String,
    pub anomaly_type: String,
    pub difficulty: DifficultyTier,
}

/// One generated task item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub task: TaskTypeId,
    pub context: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub answer_key: AnswerKey,
    pub meta: ProblemMeta,
    pub instance_id: String,
    pub lineage_id: String,
}

impl ProblemInstance {
    pub fn tier(&self) -> DifficultyTier {
        self.meta.difficulty
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationPhase {
    Initial,
    Scaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityScores {
    pub validity: u8,
    pub coherence: u8,
    pub fairness: u8,
}

impl QualityScores {
    pub fn in_range(&self) -> bool {
        [self.validity, self.coherence, self.fairness]
            .iter()
            .all(|s| (1..=5).contains(s))
    }
}

/// Orchestrator verdict on one candidate problem.
///
/// `feedback` is present exactly when the candidate was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub approved: bool,
    pub feedback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<QualityScores>,
    pub phase: ValidationPhase,
}

impl ValidationReport {
    pub fn approved(phase: ValidationPhase) -> Self {
        Self { approved: true, feedback: None, scores: None, phase }
    }

    pub fn rejected(phase: ValidationPhase, feedback: impl Into<String>) -> Self {
        Self { approved: false, feedback: Some(feedback.into()), scores: None, phase }
    }

    pub fn is_consistent(&self) -> bool {
        match (&self.approved, &self.feedback) {
            (true, None) => true,
            (false, Some(f)) => !f.trim().is_empty(),
            _ => false,
        }
    }
}

/// What a Student (or evaluated model) returned for one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentAnswer {
    pub answer: Option<AnswerKey>,
    pub explanation: String,
    pub parse_ok: bool,
}

impl StudentAnswer {
    pub fn parsed(answer: AnswerKey, explanation: impl Into<String>) -> Self {
        Self { answer: Some(answer), explanation: explanation.into(), parse_ok: true }
    }

    pub fn unparsable(raw: impl Into<String>) -> Self {
        Self { answer: None, explanation: raw.into(), parse_ok: false }
    }
}

/// Orchestrator guidance for building a harder variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscalationFeedback {
    pub analysis: String,
    pub suggestions: Vec<String>,
    pub difficulty_increase: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOutcome {
    Solved,
    Failed,
    NotAttempted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    StudentFailed,
    StudentLoopCapReached,
    RegenerationExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub instance: ProblemInstance,
    pub validation: ValidationReport,
    pub student: Option<StudentAnswer>,
    pub outcome: StageOutcome,
    /// Lineage call counter when the instance was generated.
    #[serde(default)]
    pub generated_at_call: u32,
}

/// Model call budget spent on one lineage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptCounts {
    /// Teacher generations during initialization.
    pub init_attempts: u32,
    /// Teacher generations during escalation, all tiers.
    pub regen_attempts: u32,
    pub student_calls: u32,
    pub approvals: u32,
    pub rejections: u32,
    /// Teacher outputs that failed parsing or structural checks.
    #[serde(default)]
    pub malformed: u32,
}

/// Logical timestamps: positions in the lineage's own call sequence.
///
/// Wall-clock time lives in the store manifest so that benchmark files stay
/// reproducible byte-for-byte.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalTimestamps {
    pub generated_at_call: u32,
    pub finalized_at_call: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub teacher_model: String,
    pub student_model: String,
    pub orchestrator_model: String,
    pub timestamps: LogicalTimestamps,
    pub attempt_counts: AttemptCounts,
}

/// A retained tier instance with its validation metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub instance: ProblemInstance,
    pub validation: ValidationReport,
    pub lineage_id: String,
    #[serde(rename = "final")]
    pub is_final: bool,
    pub provenance: Provenance,
    pub stop_reason: StopReason,
}

impl BenchmarkItem {
    pub fn tier(&self) -> DifficultyTier {
        self.instance.meta.difficulty
    }

    pub fn task(&self) -> TaskTypeId {
        self.instance.task
    }
}

/// One problem lineage: the tier-stamped instances produced by escalation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub lineage_id: String,
    pub task: TaskTypeId,
    pub stages: Vec<Stage>,
    pub finalized: BenchmarkItem,
    pub stop_reason: StopReason,
}

impl Trajectory {
    pub fn tiers(&self) -> Vec<DifficultyTier> {
        self.stages.iter().map(|s| s.instance.meta.difficulty).collect()
    }

    /// One item per stage; exactly the finalized stage carries `final = true`.
    pub fn items(&self) -> Vec<BenchmarkItem> {
        self.stages
            .iter()
            .map(|stage| {
                if stage.instance.instance_id == self.finalized.instance.instance_id {
                    self.finalized.clone()
                } else {
                    BenchmarkItem {
                        instance: stage.instance.clone(),
                        validation: stage.validation.clone(),
                        lineage_id: self.lineage_id.clone(),
                        is_final: false,
                        provenance: self.finalized.provenance.clone(),
                        stop_reason: self.stop_reason,
                    }
                }
            })
            .collect()
    }

    /// Structural invariants that hold for every well-formed trajectory.
    pub fn check_invariants(&self) -> Result<(), String> {
        let tiers = self.tiers();
        if tiers.first() != Some(&DifficultyTier::Easy) {
            return Err("first stage is not easy".into());
        }
        if tiers.iter().zip(DifficultyTier::ALL.iter()).any(|(a, b)| a != b) {
            return Err(format!("stage tiers {tiers:?} are not a prefix of the ladder"));
        }
        if let Some(s) = self.stages.iter().find(|s| !s.validation.approved) {
            return Err(format!("stage {} entered without approval", s.instance.instance_id));
        }
        if !self.finalized.is_final || !self.finalized.validation.approved {
            return Err("finalized item is not final/approved".into());
        }
        let expected = match self.stop_reason {
            StopReason::RegenerationExhausted => self
                .stages
                .iter()
                .rev()
                .find(|s| s.outcome == StageOutcome::Solved),
            _ => self.stages.last(),
        };
        match expected {
            Some(s) if s.instance == self.finalized.instance => Ok(()),
            _ => Err("finalized instance does not match stop rule".into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn next_tier_walks_the_ladder() {
        assert_eq!(next_tier(DifficultyTier::Easy), Some(DifficultyTier::Hard));
        assert_eq!(next_tier(DifficultyTier::Hard), Some(DifficultyTier::Extreme));
        assert_eq!(next_tier(DifficultyTier::Extreme), Some(DifficultyTier::Impossible));
        assert_eq!(next_tier(DifficultyTier::Impossible), None);
    }

    #[test]
    fn next_tier_is_strictly_greater() {
        for t in DifficultyTier::ALL {
            if let Some(n) = next_tier(t) {
                assert!(n > t);
            }
        }
    }

    #[test]
    fn enums_serialize_as_strings() {
        assert_eq!(serde_json::to_string(&TaskTypeId::T4).unwrap(), "\"T4\"");
        assert_eq!(serde_json::to_string(&DifficultyTier::Extreme).unwrap(), "\"extreme\"");
        assert_eq!(serde_json::to_string(&AnswerKey::Index(4)).unwrap(), "{\"index\":4}");
        assert_eq!(serde_json::to_string(&AnswerKey::Flag(true)).unwrap(), "{\"flag\":true}");
        assert_eq!(
            serde_json::to_string(&StopReason::RegenerationExhausted).unwrap(),
            "\"regeneration_exhausted\""
        );
    }

    #[test]
    fn parse_enums_from_text() {
        assert_eq!("t3".parse::<TaskTypeId>().unwrap(), TaskTypeId::T3);
        assert_eq!("Hard".parse::<DifficultyTier>().unwrap(), DifficultyTier::Hard);
        assert!("T8".parse::<TaskTypeId>().is_err());
        assert!("medium".parse::<DifficultyTier>().is_err());
    }

    #[test]
    fn validation_report_consistency() {
        assert!(ValidationReport::approved(ValidationPhase::Initial).is_consistent());
        assert!(ValidationReport::rejected(ValidationPhase::Scaled, "too vague").is_consistent());
        let bad = ValidationReport { approved: false, feedback: None, scores: None, phase: ValidationPhase::Initial };
        assert!(!bad.is_consistent());
        let bad = ValidationReport { approved: true, feedback: Some("x".into()), scores: None, phase: ValidationPhase::Initial };
        assert!(!bad.is_consistent());
    }
}
