//! Prompt builders for the Teacher, Orchestrator and Student roles.
//!
//! All builders are pure: identical inputs give byte-identical prompts.

use std::fmt::Write as _;

use crate::agent::parse::render_problem_json;
use crate::agent::{GenerationRequest, PromptText};
use crate::domain::{AnswerKey, DifficultyTier, ProblemInstance, StudentAnswer, TaskTypeId};
use crate::taskspec::{schema_for, task_text, AnswerForm};

const GENERATOR_ROLE: &str = "You are a GRE-style exam question generator.";
const SOFTEN_CLAUSE: &str = "The previous harder version was rejected. Slightly reduce the difficulty and regenerate, \
preserving the same task structure while avoiding ambiguity or excessive complexity.";

fn difficulty_wording(tier: DifficultyTier) -> &'static str {
    match tier {
        DifficultyTier::Easy => {
            "Create a non-trivial anomaly that requires careful reading to detect. \
             It should be noticeable but not immediately obvious."
        }
        DifficultyTier::Hard => {
            "Difficulty level: hard. Make the anomaly subtle so that detecting it requires reasoning \
             across several sentences, while keeping exactly one defensible answer."
        }
        DifficultyTier::Extreme => {
            "Difficulty level: extreme. Make the anomaly very subtle and tightly woven into the passage \
             so that only careful, expert reading reveals it, while keeping exactly one defensible answer."
        }
        DifficultyTier::Impossible => {
            "Difficulty level: impossible. Make the anomaly as subtle as the task allows while keeping \
             the problem fair, unambiguous and solvable by careful reasoning."
        }
    }
}

fn json_schema_block(req: &GenerationRequest) -> String {
    let schema = schema_for(req.task);
    let anomaly_type = req
        .factor
        .as_ref()
        .map(|f| f.name.clone())
        .unwrap_or_else(|| task_text(req.task).default_anomaly_type.clone());
    let mut s = String::from("Return the result strictly in JSON format:\n{\n  \"context\": [\"...\"],\n");
    if let Some(n) = schema.choice_arity {
        let slots = vec!["\"...\""; n].join(", ");
        let _ = writeln!(s, "  \"choices\": [{slots}],");
    }
    match schema.answer_form {
        AnswerForm::Index => s.push_str("  \"anomaly_index\": <integer>,\n"),
        AnswerForm::Flag => s.push_str("  \"is_consistent\": <boolean>,\n"),
    }
    let _ = write!(
        s,
        "  \"meta\": {{\n    \"source\": \"GRE\",\n    \"topic\": \"{}\",\n    \"anomaly_type\": \"{}\"\n  }}\n}}",
        req.topic, anomaly_type
    );
    if schema.answer_form == AnswerForm::Index {
        let target = if schema.choice_arity.is_some() { "choice" } else { "sentence" };
        let _ = write!(s, "\nNumber positions from 1: \"anomaly_index\": 1 means the first {target}.");
    }
    s
}

/// Teacher prompt for a new or escalated problem.
pub fn build_generation_prompt(req: &GenerationRequest) -> PromptText {
    let text = task_text(req.task);
    let mut user = String::new();
    let _ = writeln!(user, "Create a question for task {} on the topic of {}.", req.task, req.topic);
    let _ = writeln!(user, "{}", text.generation_instruction.replace("{topic}", &req.topic));
    if req.task == TaskTypeId::T2 {
        match req.t2_target {
            Some(true) => user.push_str("Present the sentences in their coherent order.\n"),
            Some(false) => user.push_str(
                "Present the sentences in a subtly incoherent order that breaks topic flow or causal/temporal dependencies.\n",
            ),
            None => {}
        }
    }
    if let Some(f) = &req.factor {
        let _ = writeln!(user, "The anomaly should be based on: {}.", f.name);
    }
    let _ = writeln!(user, "{}", difficulty_wording(req.difficulty));

    if let Some(prev) = &req.previous {
        let _ = write!(
            user,
            "\nThis is a harder version of a problem the student solved correctly. \
             Refine the same underlying anomaly rather than introducing unrelated content.\nPREVIOUS PROBLEM:\n{}\n",
            serde_json::to_string_pretty(&render_problem_json(prev)).expect("problem JSON")
        );
    }
    if let Some(fb) = &req.escalation {
        let _ = writeln!(user, "\nAnalysis of the student's solution: {}", fb.analysis);
        user.push_str("Suggestions for increasing difficulty:\n");
        for s in &fb.suggestions {
            let _ = writeln!(user, "- {s}");
        }
        if !fb.difficulty_increase.is_empty() {
            let _ = writeln!(user, "Difficulty increase: {}", fb.difficulty_increase);
        }
    }
    if let Some(rej) = &req.rejection_feedback {
        let _ = writeln!(
            user,
            "\nThe previous attempt was rejected by the quality controller with this feedback:\n{rej}\nAddress this feedback in the new problem."
        );
    }
    if req.soften {
        let _ = writeln!(user, "\n{SOFTEN_CLAUSE}");
    }
    user.push('\n');
    user.push_str(&json_schema_block(req));
    PromptText::system_user(GENERATOR_ROLE, user)
}

fn numbered(items: &[String]) -> String {
    items.iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)).collect::<Vec<_>>().join("\n")
}

fn problem_body(inst: &ProblemInstance) -> String {
    let mut s = format!("Context:\n{}\n", numbered(&inst.context));
    if let Some(choices) = &inst.choices {
        let _ = write!(s, "\nChoices:\n{}\n", numbered(choices));
    }
    s
}

fn correct_answer_line(key: AnswerKey) -> String {
    match key {
        AnswerKey::Index(i) => format!("Correct Answer: Option {i}"),
        AnswerKey::Flag(b) => format!("Correct Answer: {b}"),
    }
}

fn structure_block(task: TaskTypeId) -> String {
    task_text(task).structure.iter().map(|l| format!("- {l}")).collect::<Vec<_>>().join("\n")
}

const VERDICT_SCHEMA_HEAD: &str = "Return your evaluation in JSON format:\n{\n  \"approved\": boolean (true if the problem passes all criteria, false otherwise),\n  \"feedback\": null if approved, or detailed feedback if rejected addressing:\n      - Problem construction issues\n      - Anomaly ambiguity concerns\n";

/// Orchestrator check of a freshly generated base problem.
pub fn build_initial_validation_prompt(inst: &ProblemInstance) -> PromptText {
    let schema = schema_for(inst.task);
    let system = format!(
        "You are a benchmark quality controller evaluating if this problem is well-formed and structured correctly for task {}.",
        inst.task
    );
    let mut user = String::new();
    let _ = write!(
        user,
        "Task Type: {} ({})\n\nTask Description: {}\n\nExpected Structure:\n{}\n\n{}\n{}\n\n",
        schema.name,
        inst.task,
        schema.description,
        structure_block(inst.task),
        problem_body(inst),
        correct_answer_line(inst.answer_key)
    );
    user.push_str(
        "Evaluate the problem based on these criteria:\n\
         1. VALIDITY: Is the problem well-formed and complete?\n\
         2. TYPE ADHERENCE: Does the problem follow the expected task type requirements?\n\
         3. LOGICAL COHERENCE: Is the anomaly identifiable?\n\
         4. FAIRNESS: Is the problem fair and reasonable? Does it have a clear, unambiguous solution?\n\n",
    );
    user.push_str(VERDICT_SCHEMA_HEAD);
    user.push_str("      - Specific improvement suggestions\n}");
    PromptText::system_user(system, user)
}

/// Orchestrator check of an escalated candidate.
///
/// # Panics
/// When `tier` is `Easy`; base problems use [`build_initial_validation_prompt`].
pub fn build_scaled_validation_prompt(inst: &ProblemInstance, tier: DifficultyTier) -> PromptText {
    assert!(tier > DifficultyTier::Easy, "scaled validation applies to escalated tiers only");
    let schema = schema_for(inst.task);
    let system = format!(
        "You are a benchmark quality controller evaluating if a problem with increased difficulty is well-formed and appropriate for task {}.",
        inst.task
    );
    let mut user = String::new();
    let _ = write!(
        user,
        "Task Type: {} ({})\nDifficulty Level: {}\n\nTask Description: {}\n\nExpected Structure:\n{}\n\n{}\n{}\n\n",
        schema.name,
        inst.task,
        tier,
        schema.description,
        structure_block(inst.task),
        problem_body(inst),
        correct_answer_line(inst.answer_key)
    );
    user.push_str(
        "Note: While maintaining quality standards, be lenient in your evaluation. \
         Accept problems that are reasonable and solvable, even if they have minor imperfections.\n\n",
    );
    let _ = write!(
        user,
        "Evaluate the problem based on these criteria:\n\
         1. VALIDITY: Is the problem well-formed and complete?\n\
         2. TYPE ADHERENCE: Does the problem follow the expected task type requirements?\n\
         3. LOGICAL COHERENCE: Is the correct answer clearly identifiable?\n\
         4. FAIRNESS: Is the problem fair and reasonable? Does it have a clear, unambiguous solution?\n\
         5. DIFFICULTY: Is the difficulty appropriate for {tier} level?\n\n"
    );
    user.push_str(VERDICT_SCHEMA_HEAD);
    user.push_str("      - Difficulty appropriateness\n      - Specific improvement suggestions\n}");
    PromptText::system_user(system, user)
}

/// Orchestrator analysis of a solved problem, requesting escalation guidance.
pub fn build_feedback_prompt(inst: &ProblemInstance, student: &StudentAnswer) -> PromptText {
    let schema = schema_for(inst.task);
    let system = "You are helping to create a harder version of a problem that a student has correctly solved. \
                  Analyze the student's solution and provide feedback.";
    let mut user = String::new();
    let _ = write!(
        user,
        "Task Type: {} ({})\nCurrent Difficulty: {}\n\nORIGINAL PROBLEM:\n{}\n\nStudent's Explanation: \"{}\"\n\n",
        schema.name,
        inst.task,
        inst.meta.difficulty,
        serde_json::to_string_pretty(&render_problem_json(inst)).expect("problem JSON"),
        student.explanation
    );
    user.push_str(
        "Based on how the student solved this problem, provide feedback to create a more challenging version:\n\
         1. What aspects did the student easily identify?\n\
         2. How could the problem be made more subtle or complex?\n\
         3. Give specific suggestions for increasing difficulty.\n\n\
         Return your feedback in JSON format:\n{\n  \"analysis\": \"Brief analysis of student solution\",\n  \
         \"suggestions\": [\"Specific suggestion 1\", \"Specific suggestion 2\", ...],\n  \
         \"difficulty_increase\": \"Summary of how to increase difficulty\"\n}",
    );
    PromptText::system_user(system, user)
}

/// Student (and evaluated model) prompt: numbered items and a JSON answer contract.
pub fn build_solve_prompt(inst: &ProblemInstance) -> PromptText {
    let schema = schema_for(inst.task);
    let text = task_text(inst.task);
    let answer_spec = match schema.answer_form {
        AnswerForm::Index if schema.choice_arity.is_some() => "<integer, the number of the choice>",
        AnswerForm::Index => "<integer, the number of the sentence>",
        AnswerForm::Flag => "<boolean, true if the order is coherent, false otherwise>",
    };
    let user = format!(
        "Task Type: {} ({})\n\n{}\n\n{}\nReturn your answer strictly in JSON format:\n{{\n  \"answer\": {},\n  \"explanation\": \"Brief explanation of your reasoning\"\n}}",
        schema.name,
        inst.task,
        text.solve_instruction,
        problem_body(inst),
        answer_spec
    );
    PromptText::system_user("You are taking a reasoning exam on text anomaly detection.", user)
}

/// Post-hoc quality audit on the validity / coherence / fairness axes (1-5 each).
pub fn build_quality_review_prompt(inst: &ProblemInstance) -> PromptText {
    let schema = schema_for(inst.task);
    let user = format!(
        "Task Type: {} ({})\n\nTask Description: {}\n\n{}\n{}\n\n\
         Rate the problem on each axis from 1 (poor) to 5 (excellent):\n\
         - VALIDITY: Is the problem well-formed and complete?\n\
         - COHERENCE: Is it logically consistent and faithful to the task type?\n\
         - FAIRNESS: Does it have a clear, unambiguous solution?\n\n\
         Return your review in JSON format:\n{{\n  \"validity\": <1-5>,\n  \"coherence\": <1-5>,\n  \"fairness\": <1-5>,\n  \"approved\": boolean\n}}",
        schema.name,
        inst.task,
        schema.description,
        problem_body(inst),
        correct_answer_line(inst.answer_key)
    );
    PromptText::system_user("You are a reviewer auditing the quality of benchmark problems.", user)
}
