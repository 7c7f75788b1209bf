//! Deterministic stand-in agents for offline runs and tests.
//!
//! A scripted agent answers from the [`CallContext`] rather than the prompt
//! text. Canned responses in the lookup tables take precedence; otherwise a
//! synthetic generator and the configured policies produce well-formed output.

use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::agent::{render_problem_json, CallContext, GenerationRequest, Role};
use crate::domain::{
    AnswerKey, DifficultyTier, ProblemInstance, ProblemMeta, QualityScores, StudentAnswer, TaskTypeId,
};
use crate::error::GatewayError;
use crate::taskspec::{schema_for, task_text};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Generate,
    ValidateInitial,
    ValidateScaled,
    Feedback,
    Solve,
    QualityReview,
}

impl CallContext<'_> {
    pub fn kind(&self) -> CallKind {
        match self {
            CallContext::Generate(_) => CallKind::Generate,
            CallContext::ValidateInitial { .. } => CallKind::ValidateInitial,
            CallContext::ValidateScaled { .. } => CallKind::ValidateScaled,
            CallContext::Feedback { .. } => CallKind::Feedback,
            CallContext::Solve { .. } => CallKind::Solve,
            CallContext::QualityReview { .. } => CallKind::QualityReview,
        }
    }

    pub fn lineage_id(&self) -> &str {
        match self {
            CallContext::Generate(req) => &req.lineage_id,
            CallContext::ValidateInitial { instance, .. }
            | CallContext::ValidateScaled { instance, .. }
            | CallContext::Feedback { instance, .. }
            | CallContext::Solve { instance }
            | CallContext::QualityReview { instance } => &instance.lineage_id,
        }
    }

    fn task(&self) -> TaskTypeId {
        match self {
            CallContext::Generate(req) => req.task,
            CallContext::ValidateInitial { instance, .. }
            | CallContext::ValidateScaled { instance, .. }
            | CallContext::Feedback { instance, .. }
            | CallContext::Solve { instance }
            | CallContext::QualityReview { instance } => instance.task,
        }
    }

    fn tier(&self) -> DifficultyTier {
        match self {
            CallContext::Generate(req) => req.difficulty,
            CallContext::ValidateScaled { tier, .. } => *tier,
            CallContext::ValidateInitial { instance, .. }
            | CallContext::Feedback { instance, .. }
            | CallContext::Solve { instance }
            | CallContext::QualityReview { instance } => instance.tier(),
        }
    }

    fn attempt(&self) -> Option<u32> {
        match self {
            CallContext::Generate(req) => Some(req.attempt),
            CallContext::ValidateInitial { attempt, .. } | CallContext::ValidateScaled { attempt, .. } => {
                Some(*attempt)
            }
            _ => None,
        }
    }
}

/// Canned Teacher output. Unset fields match anything; `lineage` is a substring match.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateEntry {
    pub task: Option<TaskTypeId>,
    pub difficulty: Option<DifficultyTier>,
    pub attempt: Option<u32>,
    pub lineage: Option<String>,
    pub text: String,
}

/// Canned Student output for instances whose id contains `instance_pattern`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveEntry {
    pub instance_pattern: String,
    pub text: String,
}

/// A call that fails with a transport error instead of answering.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailureEntry {
    pub kind: Option<CallKind>,
    pub lineage: Option<String>,
    /// Fail only the first `times` matching calls; `None` fails all of them.
    pub times: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidatePolicy {
    /// Reject initial attempts numbered up to this value (1-based).
    pub reject_initial_attempts: u32,
    /// Reject every candidate, initial and scaled.
    pub reject_all: bool,
    /// Always reject scaled candidates at these tiers.
    pub reject_tiers: Vec<DifficultyTier>,
    /// Reject scaled attempts numbered up to this value at every tier.
    pub reject_scaled_attempts: u32,
    /// Reject everything for lineages containing one of these substrings.
    pub reject_lineages: Vec<String>,
}

impl ValidatePolicy {
    fn rejects(&self, ctx: &CallContext<'_>) -> bool {
        if self.reject_all || self.reject_lineages.iter().any(|l| ctx.lineage_id().contains(l.as_str())) {
            return true;
        }
        match ctx {
            CallContext::ValidateInitial { attempt, .. } => *attempt <= self.reject_initial_attempts,
            CallContext::ValidateScaled { tier, attempt, .. } => {
                self.reject_tiers.contains(tier) || *attempt <= self.reject_scaled_attempts
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolvePolicy {
    #[default]
    AlwaysCorrect,
    AlwaysWrong,
    /// Replies with prose and no JSON.
    Refuse,
    /// Correct strictly below `tier`, wrong from `tier` upward.
    SolveBelow { tier: DifficultyTier },
    /// Correct when the key's parity matches (`even`); flag keys count `true` as even.
    KeyParity { even: bool },
    /// Correct on a deterministic pseudo-random `rate` fraction of instances.
    Accuracy { rate: f64, salt: u64 },
}

impl SolvePolicy {
    fn correct_on(&self, inst: &ProblemInstance) -> Option<bool> {
        match self {
            SolvePolicy::AlwaysCorrect => Some(true),
            SolvePolicy::AlwaysWrong => Some(false),
            SolvePolicy::Refuse => None,
            SolvePolicy::SolveBelow { tier } => Some(inst.tier() < *tier),
            SolvePolicy::KeyParity { even } => Some(match inst.answer_key {
                AnswerKey::Index(i) => (i % 2 == 0) == *even,
                AnswerKey::Flag(b) => b == *even,
            }),
            SolvePolicy::Accuracy { rate, salt } => {
                let u = unit_hash(&format!("{}|{salt}", inst.instance_id));
                Some(u < *rate)
            }
        }
    }
}

/// Everything a scripted agent does, serializable so runs can name it in config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedBehavior {
    pub script_id: String,
    pub generate_table: Vec<GenerateEntry>,
    pub solve_table: Vec<SolveEntry>,
    pub validate: ValidatePolicy,
    pub solve: SolvePolicy,
    /// Replaces the synthetic escalation feedback verbatim.
    pub feedback_text: Option<String>,
    pub quality: QualityScores,
    pub failures: Vec<FailureEntry>,
    /// Artificial delay per call.
    pub latency_ms: u64,
}

impl Default for ScriptedBehavior {
    fn default() -> Self {
        Self::new("scripted")
    }
}

impl ScriptedBehavior {
    pub fn new(script_id: impl Into<String>) -> Self {
        Self {
            script_id: script_id.into(),
            generate_table: Vec::new(),
            solve_table: Vec::new(),
            validate: ValidatePolicy::default(),
            solve: SolvePolicy::default(),
            feedback_text: None,
            quality: QualityScores { validity: 4, coherence: 4, fairness: 4 },
            failures: Vec::new(),
            latency_ms: 0,
        }
    }

    pub fn with_solve(mut self, policy: SolvePolicy) -> Self {
        self.solve = policy;
        self
    }

    pub fn with_validate(mut self, policy: ValidatePolicy) -> Self {
        self.validate = policy;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: Role,
    pub kind: CallKind,
    pub task: TaskTypeId,
    pub tier: DifficultyTier,
    pub attempt: Option<u32>,
    pub lineage_id: String,
}

pub struct ScriptedAgent {
    behavior: ScriptedBehavior,
    calls: Mutex<Vec<CallRecord>>,
    failure_hits: Mutex<Vec<u32>>,
}

impl ScriptedAgent {
    pub fn new(behavior: ScriptedBehavior) -> Self {
        let hits = vec![0; behavior.failures.len()];
        Self { behavior, calls: Mutex::new(Vec::new()), failure_hits: Mutex::new(hits) }
    }

    pub fn behavior(&self) -> &ScriptedBehavior {
        &self.behavior
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self, kind: CallKind) -> usize {
        self.calls.lock().unwrap().iter().filter(|c| c.kind == kind).count()
    }

    pub fn respond(&self, role: Role, ctx: &CallContext<'_>) -> Result<String, GatewayError> {
        self.calls.lock().unwrap().push(CallRecord {
            role,
            kind: ctx.kind(),
            task: ctx.task(),
            tier: ctx.tier(),
            attempt: ctx.attempt(),
            lineage_id: ctx.lineage_id().to_string(),
        });
        if self.behavior.latency_ms > 0 {
            thread::sleep(Duration::from_millis(self.behavior.latency_ms));
        }
        self.injected_failure(ctx)?;
        Ok(match ctx {
            CallContext::Generate(req) => self.generate(req),
            CallContext::ValidateInitial { .. } | CallContext::ValidateScaled { .. } => self.validate(ctx),
            CallContext::Feedback { instance, student } => self.feedback(instance, student),
            CallContext::Solve { instance } => self.solve(instance),
            CallContext::QualityReview { .. } => json!({
                "validity": self.behavior.quality.validity,
                "coherence": self.behavior.quality.coherence,
                "fairness": self.behavior.quality.fairness,
            })
            .to_string(),
        })
    }

    fn injected_failure(&self, ctx: &CallContext<'_>) -> Result<(), GatewayError> {
        let mut hits = self.failure_hits.lock().unwrap();
        for (entry, hit) in self.behavior.failures.iter().zip(hits.iter_mut()) {
            let matches = entry.kind.is_none_or(|k| k == ctx.kind())
                && entry.lineage.as_deref().is_none_or(|l| ctx.lineage_id().contains(l));
            if matches && entry.times.is_none_or(|t| *hit < t) {
                *hit += 1;
                return Err(GatewayError::Transport(format!("injected failure on {:?}", ctx.kind())));
            }
        }
        Ok(())
    }

    fn generate(&self, req: &GenerationRequest) -> String {
        let canned = self.behavior.generate_table.iter().find(|e| {
            e.task.is_none_or(|t| t == req.task)
                && e.difficulty.is_none_or(|d| d == req.difficulty)
                && e.attempt.is_none_or(|a| a == req.attempt)
                && e.lineage.as_deref().is_none_or(|l| req.lineage_id.contains(l))
        });
        match canned {
            Some(e) => e.text.clone(),
            None => format!("```json\n{:#}\n```", render_problem_json(&synthetic_problem(req))),
        }
    }

    fn validate(&self, ctx: &CallContext<'_>) -> String {
        if self.behavior.validate.rejects(ctx) {
            json!({
                "approved": false,
                "feedback": format!(
                    "The anomaly at {} is not clearly distinguishable; tighten the distractors.",
                    ctx.tier()
                ),
            })
            .to_string()
        } else {
            json!({"approved": true, "feedback": null}).to_string()
        }
    }

    fn feedback(&self, inst: &ProblemInstance, student: &StudentAnswer) -> String {
        if let Some(text) = &self.behavior.feedback_text {
            return text.clone();
        }
        let solved_by = if student.explanation.is_empty() { "direct inspection" } else { "its explanation" };
        json!({
            "analysis": format!(
                "The student located answer {} at {} through {solved_by}.",
                inst.answer_key,
                inst.tier()
            ),
            "suggestions": [
                "Make the anomalous element share vocabulary with its neighbours.",
                "Add a plausible distractor that resembles the anomaly.",
            ],
            "difficulty_increase": "Require multi-step inference to locate the anomaly.",
        })
        .to_string()
    }

    fn solve(&self, inst: &ProblemInstance) -> String {
        if let Some(e) = self.behavior.solve_table.iter().find(|e| inst.instance_id.contains(&e.instance_pattern)) {
            return e.text.clone();
        }
        match self.behavior.solve.correct_on(inst) {
            None => "I'm sorry, I can't help with that.".to_string(),
            Some(correct) => {
                let answer = if correct { inst.answer_key } else { wrong_answer(inst) };
                let answer = match answer {
                    AnswerKey::Index(i) => json!(i),
                    AnswerKey::Flag(b) => json!(b),
                };
                json!({"answer": answer, "explanation": "Scripted answer."}).to_string()
            }
        }
    }
}

/// A deterministic incorrect answer for `inst`.
pub fn wrong_answer(inst: &ProblemInstance) -> AnswerKey {
    match inst.answer_key {
        AnswerKey::Index(k) => {
            let len = schema_for(inst.task).indexed_len(inst).max(2) as u32;
            AnswerKey::Index(k % len + 1)
        }
        AnswerKey::Flag(b) => AnswerKey::Flag(!b),
    }
}

fn hash64(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn unit_hash(s: &str) -> f64 {
    (hash64(s) >> 11) as f64 / (1u64 << 53) as f64
}

/// A structurally valid candidate for `req`, varying with lineage, tier and attempt.
pub fn synthetic_problem(req: &GenerationRequest) -> ProblemInstance {
    let h = hash64(&format!("{}|{}|{}|{}", req.lineage_id, req.task, req.difficulty, req.attempt));
    let schema = schema_for(req.task);
    let topic = req.topic.as_str();
    let tier = req.difficulty.as_str();
    let sentence = |i: usize| format!("Sentence {i} discusses {topic} at the {tier} level.");
    let options = |n: usize| (1..=n).map(|i| format!("option {i} on {topic}")).collect::<Vec<_>>();
    let (context, choices) = match req.task {
        TaskTypeId::T3 => (vec![format!("In {topic}, the argument relies on a ____ premise.")], Some(options(5))),
        TaskTypeId::T4 => (
            vec![
                format!("The first paragraph introduces a claim about {topic}."),
                format!("The second paragraph develops a consequence of that claim at the {tier} level."),
            ],
            Some(options(5)),
        ),
        _ => {
            let n = if *schema.context_arity.end() > *schema.context_arity.start() {
                schema.context_arity.start() + (h as usize >> 8) % 2
            } else {
                *schema.context_arity.start()
            };
            ((1..=n).map(sentence).collect(), None)
        }
    };
    let n_indexed = choices.as_ref().map_or(context.len(), Vec::len) as u64;
    let answer_key = match req.task {
        TaskTypeId::T2 => AnswerKey::Flag(req.t2_target.unwrap_or(h & 1 == 0)),
        _ => AnswerKey::Index((h % n_indexed) as u32 + 1),
    };
    let mut anomaly_type = req
        .factor
        .as_ref()
        .map_or_else(|| task_text(req.task).default_anomaly_type.clone(), |f| f.name.clone());
    if req.soften {
        anomaly_type.push_str(" (softened)");
    }
    ProblemInstance {
        task: req.task,
        context,
        choices,
        answer_key,
        meta: ProblemMeta {
            source: "GRE".into(),
            topic: topic.to_string(),
            anomaly_type,
            difficulty: req.difficulty,
        },
        instance_id: String::new(),
        lineage_id: req.lineage_id.clone(),
    }
}
