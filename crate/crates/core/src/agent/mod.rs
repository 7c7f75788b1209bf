//! Everything between the protocol and a model: prompt text, the
//! chat-completion client, scripted test agents and output parsers.

pub mod parse;
pub mod prompts;
pub mod scripted;
pub mod wire;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{DifficultyTier, EscalationFeedback, ProblemInstance, QualityScores, StudentAnswer, TaskTypeId};
use crate::error::{AgentParseError, GatewayError};
use crate::taskspec::ChallengeFactor;

pub use parse::{
    extract_json_object, parse_feedback, parse_problem, parse_quality_review, parse_student_answer,
    parse_validation, render_problem_json, ParseTarget,
};
pub use prompts::{
    build_feedback_prompt, build_generation_prompt, build_initial_validation_prompt,
    build_quality_review_prompt, build_scaled_validation_prompt, build_solve_prompt,
};
pub use scripted::{ScriptedAgent, ScriptedBehavior, SolvePolicy, ValidatePolicy};
pub use wire::{RetryPolicy, Transport, WireClient, WireConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Orchestrator,
    Student,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Teacher => "teacher",
            Role::Orchestrator => "orchestrator",
            Role::Student => "student",
        })
    }
}

impl Role {
    /// Sampling temperature used when a config leaves it unset.
    pub fn default_temperature(self) -> f64 {
        match self {
            Role::Teacher => 0.8,
            Role::Orchestrator | Role::Student => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: MessageRole,
    pub content: String,
}

/// Ordered chat messages sent to a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub messages: Vec<Message>,
}

impl PromptText {
    pub(crate) fn system_user(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            messages: vec![
                Message { role: MessageRole::System, content: system.into() },
                Message { role: MessageRole::User, content: user.into() },
            ],
        }
    }

    /// All message contents joined by blank lines.
    pub fn joined(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n\n")
    }

    pub fn is_well_formed(&self) -> bool {
        self.messages.iter().any(|m| m.role == MessageRole::User)
            && self.messages.iter().all(|m| !m.content.trim().is_empty())
    }
}

/// Inputs to one Teacher generation call.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub task: TaskTypeId,
    pub topic: String,
    pub factor: Option<ChallengeFactor>,
    pub difficulty: DifficultyTier,
    pub escalation: Option<EscalationFeedback>,
    /// Problem being escalated from, when generating a harder variant.
    pub previous: Option<ProblemInstance>,
    /// Orchestrator feedback on the previous rejected candidate.
    pub rejection_feedback: Option<String>,
    /// Ask for a slightly easier candidate at the same tier label.
    pub soften: bool,
    /// Desired order-consistency answer for T2 items.
    pub t2_target: Option<bool>,
    pub lineage_id: String,
    pub attempt: u32,
}

impl GenerationRequest {
    pub fn new(task: TaskTypeId, topic: impl Into<String>, difficulty: DifficultyTier) -> Self {
        Self {
            task,
            topic: topic.into(),
            factor: None,
            difficulty,
            escalation: None,
            previous: None,
            rejection_feedback: None,
            soften: false,
            t2_target: None,
            lineage_id: String::new(),
            attempt: 1,
        }
    }
}

/// Protocol-level meaning of a model call. Wire backends ignore it; scripted
/// agents answer from it.
#[derive(Debug, Clone, Copy)]
pub enum CallContext<'a> {
    Generate(&'a GenerationRequest),
    ValidateInitial { instance: &'a ProblemInstance, attempt: u32 },
    ValidateScaled { instance: &'a ProblemInstance, tier: DifficultyTier, attempt: u32 },
    Feedback { instance: &'a ProblemInstance, student: &'a StudentAnswer },
    Solve { instance: &'a ProblemInstance },
    QualityReview { instance: &'a ProblemInstance },
}

#[derive(Clone)]
pub enum AgentBackend {
    Wire(Arc<WireClient>),
    Scripted(Arc<ScriptedAgent>),
}

impl fmt::Debug for AgentBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentBackend::Wire(w) => write!(f, "Wire({})", w.config().model),
            AgentBackend::Scripted(s) => write!(f, "Scripted({})", s.behavior().script_id),
        }
    }
}

/// A model serving one protocol role.
#[derive(Debug, Clone)]
pub struct AgentHandle {
    pub role: Role,
    /// Model identity recorded in provenance and evaluation records.
    pub name: String,
    pub backend: AgentBackend,
}

impl AgentHandle {
    pub fn scripted(role: Role, name: impl Into<String>, agent: Arc<ScriptedAgent>) -> Self {
        Self { role, name: name.into(), backend: AgentBackend::Scripted(agent) }
    }

    pub fn wire(role: Role, name: impl Into<String>, client: Arc<WireClient>) -> Self {
        Self { role, name: name.into(), backend: AgentBackend::Wire(client) }
    }

    pub fn complete(&self, prompt: &PromptText, ctx: &CallContext<'_>) -> Result<String, GatewayError> {
        match &self.backend {
            AgentBackend::Wire(client) => client.complete(prompt),
            AgentBackend::Scripted(agent) => agent.respond(self.role, ctx),
        }
    }

    pub fn is_scripted(&self) -> bool {
        matches!(self.backend, AgentBackend::Scripted(_))
    }
}

/// Asks a Student-role agent to solve `inst`. Unparsable output is not an
/// error: it comes back with `parse_ok = false` and the raw text as explanation.
pub fn solve(student: &AgentHandle, inst: &ProblemInstance) -> Result<StudentAnswer, GatewayError> {
    debug_assert_eq!(student.role, Role::Student);
    let prompt = build_solve_prompt(inst);
    let raw = student.complete(&prompt, &CallContext::Solve { instance: inst })?;
    Ok(parse_student_answer(&raw, inst.task))
}

/// Out-of-loop audit: asks an Orchestrator-role agent for 1-5 scores.
/// The outer error is transport, the inner one malformed output.
pub fn review_quality(
    orchestrator: &AgentHandle,
    inst: &ProblemInstance,
) -> Result<Result<QualityScores, AgentParseError>, GatewayError> {
    debug_assert_eq!(orchestrator.role, Role::Orchestrator);
    let raw = orchestrator.complete(&build_quality_review_prompt(inst), &CallContext::QualityReview { instance: inst })?;
    Ok(parse_quality_review(&raw))
}
