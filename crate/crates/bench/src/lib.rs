//! Workload builders shared by the benchmarks.

use atad_core::config::CampaignConfig;
use atad_core::TaskTypeId;
use serde_json::json;

/// All-scripted campaign; the orchestrator rejects the first initial draft.
pub fn scripted_campaign(seed: u64, samples: u32, tasks: &[TaskTypeId], concurrency: usize) -> CampaignConfig {
    CampaignConfig::from_value(json!({
        "generator_tag": "bench",
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
    .expect("bench config is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_builds_agents() {
        let cfg = scripted_campaign(1, 2, &TaskTypeId::ALL, 1);
        cfg.build_agents().unwrap();
        assert_eq!(cfg.build_models().unwrap().len(), 2);
    }
}
