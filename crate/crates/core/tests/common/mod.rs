#![allow(dead_code)]

use atad_core::config::CampaignConfig;
use atad_core::taskspec::{schema_for, topics_for, AnswerForm};
use atad_core::{AnswerKey, DifficultyTier, ProblemInstance, ProblemMeta, TaskTypeId};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;

const WORDS: &[&str] = &[
    "the", "river", "delta", "\"quoted\"", "protein", "folds", "under", "heat", "café", "naïve", "{brace}",
    "back\\slash", "ratio", "50%", "markets", "clear", "when", "prices", "rise", "—", "it's", "[bracket]",
];

fn sentence<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(3..12);
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    format!("{}.", words.join(" "))
}

/// A structurally valid instance of `task` with random text.
pub fn random_instance<R: Rng>(rng: &mut R, task: TaskTypeId) -> ProblemInstance {
    let schema = schema_for(task);
    let n = rng.gen_range(schema.context_arity.clone());
    let context = (0..n).map(|_| sentence(rng)).collect();
    let choices = schema.choice_arity.map(|k| (0..k).map(|_| sentence(rng)).collect::<Vec<_>>());
    let len = choices.as_ref().map_or(n, Vec::len);
    let answer_key = match schema.answer_form {
        AnswerForm::Index => AnswerKey::Index(rng.gen_range(1..=len as u32)),
        AnswerForm::Flag => AnswerKey::Flag(rng.gen()),
    };
    let topic = topics_for(task).labels().choose(rng).unwrap().to_string();
    let tier = *DifficultyTier::ALL.choose(rng).unwrap();
    let lineage_id = format!("{task}-s{}-{:04}", rng.gen_range(0..100), rng.gen_range(0..1000));
    ProblemInstance {
        task,
        context,
        choices,
        answer_key,
        meta: ProblemMeta {
            source: ["GRE", "GMAT", "SAT"].choose(rng).unwrap().to_string(),
            topic,
            anomaly_type: sentence(rng),
            difficulty: tier,
        },
        instance_id: format!("{lineage_id}-{tier}-a{}", rng.gen_range(1..4)),
        lineage_id,
    }
}

/// Fully scripted campaign config. The student answers correctly on a
/// pseudo-random 60% of instances and the orchestrator rejects the first
/// initialization attempt of each lineage.
pub fn scripted_config(tag: &str, seed: u64, samples: u32, tasks: &[TaskTypeId], concurrency: usize) -> CampaignConfig {
    CampaignConfig::from_value(json!({
        "generator_tag": tag,
        "generator_family": "Scripted",
        "protocol": {"seed": seed, "samples_per_task": samples, "tasks": tasks, "concurrency": concurrency},
        "agents": {
            "teacher": {"backend": "scripted", "name": "teacher-m"},
            "orchestrator": {"backend": "scripted", "name": "orch-m",
                             "behavior": {"script_id": "orch", "validate": {"reject_initial_attempts": 1}}},
            "student": {"backend": "scripted", "name": "student-m",
                        "behavior": {"script_id": "student", "solve": {"kind": "accuracy", "rate": 0.6, "salt": 3}}},
        },
        "evaluation": {"models": [
            {"backend": "scripted", "name": "eval-a",
             "behavior": {"script_id": "a", "solve": {"kind": "accuracy", "rate": 0.7, "salt": 5}}},
            {"backend": "scripted", "name": "eval-b",
             "behavior": {"script_id": "b", "solve": {"kind": "solve_below", "tier": "extreme"}}},
        ]},
    }))
    .expect("valid scripted config")
}
