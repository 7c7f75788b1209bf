//! Per-task schemas, grading, challenge factors and the topic mapping.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{AnswerKey, ProblemInstance, StudentAnswer, TaskTypeId};

/// Version tag of the bundled task text resources.
pub const TASK_RESOURCES_VERSION: &str = "tasks.v1";

/// Probability that a challenge factor is injected into a generation.
pub const CHALLENGE_FACTOR_RATE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerForm {
    Index,
    Flag,
}

/// Task text shipped with the crate (see `resources/tasks.v1.json`).
#[derive(Debug, Clone, Deserialize)]
pub struct TaskText {
    pub name: String,
    pub description: String,
    pub generation_instruction: String,
    pub structure: Vec<String>,
    pub default_anomaly_type: String,
    pub solve_instruction: String,
}

#[derive(Debug, Deserialize)]
struct TaskResources {
    version: String,
    tasks: BTreeMap<TaskTypeId, TaskText>,
}

fn resources() -> &'static TaskResources {
    static RES: OnceLock<TaskResources> = OnceLock::new();
    RES.get_or_init(|| {
        let res: TaskResources = serde_json::from_str(include_str!("../resources/tasks.v1.json"))
            .expect("bundled task resources are valid JSON");
        assert_eq!(res.version, TASK_RESOURCES_VERSION);
        assert_eq!(res.tasks.len(), TaskTypeId::ALL.len());
        res
    })
}

pub fn task_text(task: TaskTypeId) -> &'static TaskText {
    &resources().tasks[&task]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSchema {
    pub task: TaskTypeId,
    pub name: &'static str,
    pub context_arity: RangeInclusive<usize>,
    pub choice_arity: Option<usize>,
    pub answer_form: AnswerForm,
    pub description: &'static str,
}

impl TaskSchema {
    /// Length of the list an index answer points into.
    pub fn indexed_len(&self, inst: &ProblemInstance) -> usize {
        match self.choice_arity {
            Some(_) => inst.choices.as_ref().map_or(0, Vec::len),
            None => inst.context.len(),
        }
    }
}

pub fn schema_for(task: TaskTypeId) -> TaskSchema {
    use TaskTypeId::*;
    let (context_arity, choice_arity, answer_form) = match task {
        T1 => (5..=6, None, AnswerForm::Index),
        T2 => (5..=5, None, AnswerForm::Flag),
        T3 => (1..=1, Some(5), AnswerForm::Index),
        T4 => (2..=2, Some(5), AnswerForm::Index),
        T5 | T6 | T7 => (5..=5, None, AnswerForm::Index),
    };
    let text = task_text(task);
    TaskSchema {
        task,
        name: &text.name,
        context_arity,
        choice_arity,
        answer_form,
        description: &text.description,
    }
}

/// Academic domain a topic belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Science,
    Philosophy,
    PoliticsSociety,
    Psychology,
    Economics,
    Literature,
}

/// A topic label as used in prompts, with its domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Topic {
    pub label: &'static str,
    pub domain: Domain,
}

const fn topic(label: &'static str, domain: Domain) -> Topic {
    Topic { label, domain }
}

const PHILOSOPHY: Topic = topic("philosophy", Domain::Philosophy);
const SOCIETY: Topic = topic("society", Domain::PoliticsSociety);
const POLITICS: Topic = topic("politics", Domain::PoliticsSociety);
const POLICY: Topic = topic("policy", Domain::PoliticsSociety);
const PSYCHOLOGY: Topic = topic("psychology", Domain::Psychology);
const SCIENCE: Topic = topic("science", Domain::Science);
const ECONOMICS: Topic = topic("economics", Domain::Economics);
const LITERATURE: Topic = topic("literature", Domain::Literature);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicSet {
    pub task: TaskTypeId,
    pub topics: &'static [Topic],
}

impl TopicSet {
    pub fn contains(&self, label: &str) -> bool {
        self.find(label).is_some()
    }

    pub fn find(&self, label: &str) -> Option<Topic> {
        let label = label.trim();
        self.topics.iter().copied().find(|t| t.label.eq_ignore_ascii_case(label))
    }

    pub fn labels(&self) -> Vec<&'static str> {
        self.topics.iter().map(|t| t.label).collect()
    }
}

pub fn topics_for(task: TaskTypeId) -> TopicSet {
    use TaskTypeId::*;
    let topics: &'static [Topic] = match task {
        T1 => &[PHILOSOPHY, SOCIETY, PSYCHOLOGY],
        T2 => &[SCIENCE, ECONOMICS, POLITICS],
        T3 => &[LITERATURE, PSYCHOLOGY, PHILOSOPHY],
        T4 => &[ECONOMICS, SOCIETY, POLICY],
        T5 => &[PSYCHOLOGY, LITERATURE, PHILOSOPHY],
        T6 => &[SCIENCE, ECONOMICS, POLITICS],
        T7 => &[LITERATURE, PHILOSOPHY],
    };
    TopicSet { task, topics }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChallengeFactor {
    pub task: TaskTypeId,
    pub name: String,
}

pub fn challenge_factors(task: TaskTypeId) -> &'static [&'static str] {
    use TaskTypeId::*;
    match task {
        T1 => &["minor topic shift", "semantic deviation"],
        T2 => &["sentence reordering"],
        T3 => &["lexical fit", "collocation"],
        T4 => &["weak logical connection", "abrupt topic shift"],
        T5 => &["ambiguous pronouns", "unclear referents"],
        T6 => &["contradictory claims", "causal reversal"],
        T7 => &["tone shift", "register mismatch"],
    }
}

impl ChallengeFactor {
    /// Builds a factor, checking that `name` is on the task's list.
    pub fn new(task: TaskTypeId, name: &str) -> Option<Self> {
        challenge_factors(task)
            .iter()
            .find(|f| f.eq_ignore_ascii_case(name.trim()))
            .map(|f| ChallengeFactor { task, name: (*f).to_string() })
    }
}

/// Draws a factor with probability [`CHALLENGE_FACTOR_RATE`], uniform within the task.
pub fn sample_challenge_factor<R: Rng + ?Sized>(task: TaskTypeId, rng: &mut R) -> Option<ChallengeFactor> {
    if !rng.gen_bool(CHALLENGE_FACTOR_RATE) {
        return None;
    }
    let name = challenge_factors(task).choose(rng).expect("every task has factors");
    Some(ChallengeFactor { task, name: (*name).to_string() })
}

pub fn sample_challenge_factor_seeded(task: TaskTypeId, seed: u64) -> Option<ChallengeFactor> {
    sample_challenge_factor(task, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// One broken structural rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StructureViolation {
    ContextArity { min: usize, max: usize, found: usize },
    ChoiceArity { expected: usize, found: usize },
    MissingChoices,
    UnexpectedChoices,
    AnswerForm { expected: AnswerForm },
    AnswerIndexOutOfRange { index: u32, len: usize },
    EmptySegment { position: usize },
    TopicNotPermitted { topic: String },
    MissingIdentifier,
    MissingField { field: String },
}

impl std::fmt::Display for StructureViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        use StructureViolation::*;
        match self {
            ContextArity { min, max, found } if min == max => {
                write!(f, "context must have exactly {min} entries, found {found}")
            }
            ContextArity { min, max, found } => {
                write!(f, "context must have {min}-{max} entries, found {found}")
            }
            ChoiceArity { expected, found } => write!(f, "expected {expected} choices, found {found}"),
            MissingChoices => f.write_str("choices are required for this task"),
            UnexpectedChoices => f.write_str("this task takes no choices"),
            AnswerForm { expected: self::AnswerForm::Flag } => f.write_str("answer must be a boolean"),
            AnswerForm { expected: self::AnswerForm::Index } => f.write_str("answer must be an index"),
            AnswerIndexOutOfRange { index, len } => {
                write!(f, "answer index {index} is outside 1..={len}")
            }
            EmptySegment { position } => write!(f, "text segment {position} is empty"),
            TopicNotPermitted { topic } => write!(f, "topic {topic:?} is not permitted for this task"),
            MissingIdentifier => f.write_str("instance or lineage id is empty"),
            MissingField { field } => write!(f, "required field {field:?} is missing or malformed"),
        }
    }
}

pub fn validate_structure(inst: &ProblemInstance) -> Vec<StructureViolation> {
    let schema = schema_for(inst.task);
    let mut out = Vec::new();

    let n = inst.context.len();
    if !schema.context_arity.contains(&n) {
        out.push(StructureViolation::ContextArity {
            min: *schema.context_arity.start(),
            max: *schema.context_arity.end(),
            found: n,
        });
    }

    match (schema.choice_arity, &inst.choices) {
        (Some(_), None) => out.push(StructureViolation::MissingChoices),
        (Some(expected), Some(c)) if c.len() != expected => {
            out.push(StructureViolation::ChoiceArity { expected, found: c.len() })
        }
        (None, Some(_)) => out.push(StructureViolation::UnexpectedChoices),
        _ => {}
    }

    let segments = inst.context.iter().chain(inst.choices.iter().flatten());
    for (position, s) in segments.enumerate() {
        if s.trim().is_empty() {
            out.push(StructureViolation::EmptySegment { position: position + 1 });
        }
    }

    match (schema.answer_form, inst.answer_key) {
        (AnswerForm::Index, AnswerKey::Index(i)) => {
            let len = schema.indexed_len(inst);
            if i == 0 || i as usize > len {
                out.push(StructureViolation::AnswerIndexOutOfRange { index: i, len });
            }
        }
        (AnswerForm::Flag, AnswerKey::Flag(_)) => {}
        (expected, _) => out.push(StructureViolation::AnswerForm { expected }),
    }

    if !topics_for(inst.task).contains(&inst.meta.topic) {
        out.push(StructureViolation::TopicNotPermitted { topic: inst.meta.topic.clone() });
    }
    if inst.instance_id.is_empty() || inst.lineage_id.is_empty() {
        out.push(StructureViolation::MissingIdentifier);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    Unparsable,
}

/// Exact-match grading; unparsable answers are reported separately.
pub fn grade(inst: &ProblemInstance, ans: &StudentAnswer) -> Verdict {
    if !ans.parse_ok {
        return Verdict::Unparsable;
    }
    match ans.answer {
        Some(a) if a == inst.answer_key => Verdict::Correct,
        _ => Verdict::Incorrect,
    }
}
