//! Strict parsers for agent output.
//!
//! Models decorate JSON with prose and code fences, so extraction is lenient:
//! the first balanced `{...}` that parses as a JSON object wins. Everything
//! after extraction is checked strictly.

use serde_json::{json, Map, Value};

use crate::domain::{
    AnswerKey, DifficultyTier, EscalationFeedback, ProblemInstance, ProblemMeta, QualityScores,
    StudentAnswer, TaskTypeId, ValidationPhase, ValidationReport,
};
use crate::error::AgentParseError;
use crate::taskspec::{schema_for, task_text, topics_for, validate_structure, AnswerForm, StructureViolation};

/// Finds the first JSON object embedded in `text`.
pub fn extract_json_object(text: &str) -> Option<Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(offset) = text[start..].find('{') {
        let open = start + offset;
        if let Some(close) = matching_brace(bytes, open) {
            if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&text[open..=close]) {
                return Some(map);
            }
        }
        start = open + 1;
    }
    None
}

fn matching_brace(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Identity assigned to a parsed candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTarget {
    pub task: TaskTypeId,
    pub lineage_id: String,
    pub instance_id: String,
    pub tier: DifficultyTier,
}

fn string_list(v: Option<&Value>) -> Option<Vec<String>> {
    v?.as_array()?.iter().map(|x| x.as_str().map(str::to_string)).collect()
}

fn as_index(v: &Value) -> Option<u32> {
    match v {
        Value::Number(n) => n.as_u64().and_then(|n| u32::try_from(n).ok()),
        Value::String(s) => {
            let digits: String = s
                .trim()
                .trim_start_matches(|c: char| !c.is_ascii_digit())
                .chars()
                .take_while(char::is_ascii_digit)
                .collect();
            digits.parse().ok()
        }
        _ => None,
    }
}

fn as_flag(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "yes" => Some(true),
            "false" | "no" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

fn missing(field: &'static str) -> StructureViolation {
    StructureViolation::MissingField { field: field.to_string() }
}

/// Parses a Teacher generation into a [`ProblemInstance`] and checks its structure.
pub fn parse_problem(text: &str, target: &ParseTarget) -> Result<ProblemInstance, AgentParseError> {
    let obj = extract_json_object(text).ok_or(AgentParseError::NoJsonFound)?;
    let schema = schema_for(target.task);
    let mut violations = Vec::new();

    let context = string_list(obj.get("context"));
    if context.is_none() {
        violations.push(missing("context"));
    }
    let choices = match obj.get("choices") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let list = string_list(Some(v));
            if list.is_none() {
                violations.push(missing("choices"));
            }
            list
        }
    };
    let answer_key = match schema.answer_form {
        AnswerForm::Index => obj.get("anomaly_index").and_then(as_index).map(AnswerKey::Index),
        AnswerForm::Flag => obj.get("is_consistent").and_then(as_flag).map(AnswerKey::Flag),
    };
    if answer_key.is_none() {
        violations.push(missing(match schema.answer_form {
            AnswerForm::Index => "anomaly_index",
            AnswerForm::Flag => "is_consistent",
        }));
    }
    let meta = obj.get("meta").and_then(Value::as_object);
    let topic = meta.and_then(|m| m.get("topic")).and_then(Value::as_str);
    if topic.is_none() {
        violations.push(missing("meta.topic"));
    }
    if !violations.is_empty() {
        return Err(AgentParseError::SchemaMismatch(violations));
    }

    let topic = topic.unwrap_or_default();
    let topic = topics_for(target.task).find(topic).map_or_else(|| topic.to_string(), |t| t.label.to_string());
    let meta_str = |key: &str| meta.and_then(|m| m.get(key)).and_then(Value::as_str).map(str::to_string);
    let inst = ProblemInstance {
        task: target.task,
        context: context.unwrap_or_default(),
        choices,
        answer_key: answer_key.expect("checked above"),
        meta: ProblemMeta {
            source: meta_str("source").unwrap_or_else(|| "GRE".to_string()),
            topic,
            anomaly_type: meta_str("anomaly_type")
                .unwrap_or_else(|| task_text(target.task).default_anomaly_type.clone()),
            difficulty: target.tier,
        },
        instance_id: target.instance_id.clone(),
        lineage_id: target.lineage_id.clone(),
    };
    let violations = validate_structure(&inst);
    if violations.is_empty() {
        Ok(inst)
    } else {
        Err(AgentParseError::SchemaMismatch(violations))
    }
}

/// Renders an instance in the Teacher's generation schema (the inverse of [`parse_problem`]).
pub fn render_problem_json(inst: &ProblemInstance) -> Value {
    let mut obj = Map::new();
    obj.insert("context".into(), json!(inst.context));
    if let Some(c) = &inst.choices {
        obj.insert("choices".into(), json!(c));
    }
    match inst.answer_key {
        AnswerKey::Index(i) => obj.insert("anomaly_index".into(), json!(i)),
        AnswerKey::Flag(b) => obj.insert("is_consistent".into(), json!(b)),
    };
    obj.insert(
        "meta".into(),
        json!({
            "source": inst.meta.source,
            "topic": inst.meta.topic,
            "anomaly_type": inst.meta.anomaly_type,
            "difficulty": inst.meta.difficulty,
        }),
    );
    Value::Object(obj)
}

fn scores_from(obj: &Map<String, Value>) -> Option<QualityScores> {
    let get = |k: &str| obj.get(k).and_then(Value::as_u64).and_then(|v| u8::try_from(v).ok());
    let s = QualityScores { validity: get("validity")?, coherence: get("coherence")?, fairness: get("fairness")? };
    s.in_range().then_some(s)
}

/// Parses an Orchestrator verdict.
pub fn parse_validation(text: &str, phase: ValidationPhase) -> Result<ValidationReport, AgentParseError> {
    let obj = extract_json_object(text).ok_or(AgentParseError::NoJsonFound)?;
    let approved = obj.get("approved").and_then(Value::as_bool).ok_or(AgentParseError::MissingApprovedField)?;
    let scores = obj.get("scores").and_then(Value::as_object).and_then(scores_from);
    if approved {
        return Ok(ValidationReport { approved, feedback: None, scores, phase });
    }
    let feedback = match obj.get("feedback") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        // Structured feedback objects are kept as compact JSON text.
        Some(v @ (Value::Object(_) | Value::Array(_))) => v.to_string(),
        _ => return Err(AgentParseError::InconsistentReport),
    };
    Ok(ValidationReport { approved, feedback: Some(feedback), scores, phase })
}

/// Parses escalation guidance.
pub fn parse_feedback(text: &str) -> Result<EscalationFeedback, AgentParseError> {
    let obj = extract_json_object(text).ok_or(AgentParseError::NoJsonFound)?;
    let field = |k: &'static str| {
        obj.get(k)
            .and_then(Value::as_str)
            .filter(|s| !s.trim().is_empty())
            .map(str::to_string)
            .ok_or(AgentParseError::MissingField(k))
    };
    let analysis = field("analysis")?;
    let suggestions: Vec<String> = string_list(obj.get("suggestions"))
        .map(|v| v.into_iter().filter(|s| !s.trim().is_empty()).collect())
        .unwrap_or_default();
    if suggestions.is_empty() {
        return Err(AgentParseError::MissingField("suggestions"));
    }
    let difficulty_increase = field("difficulty_increase")?;
    Ok(EscalationFeedback { analysis, suggestions, difficulty_increase })
}

/// Parses a solve attempt. Never fails: unusable output yields `parse_ok = false`.
pub fn parse_student_answer(text: &str, task: TaskTypeId) -> StudentAnswer {
    let Some(obj) = extract_json_object(text) else {
        return StudentAnswer::unparsable(text);
    };
    let answer = obj.get("answer").and_then(|v| match schema_for(task).answer_form {
        AnswerForm::Index => as_index(v).filter(|i| *i > 0).map(AnswerKey::Index),
        AnswerForm::Flag => as_flag(v).map(AnswerKey::Flag),
    });
    match answer {
        Some(a) => {
            let explanation = obj.get("explanation").and_then(Value::as_str).unwrap_or_default();
            StudentAnswer::parsed(a, explanation)
        }
        None => StudentAnswer::unparsable(text),
    }
}

/// Parses a quality-review response into 1-5 scores.
pub fn parse_quality_review(text: &str) -> Result<QualityScores, AgentParseError> {
    let obj = extract_json_object(text).ok_or(AgentParseError::NoJsonFound)?;
    scores_from(&obj).ok_or(AgentParseError::MissingField("validity/coherence/fairness"))
}
