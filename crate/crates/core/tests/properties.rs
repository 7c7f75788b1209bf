mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use num_rational::Ratio;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use atad_core::agent::{
    parse_problem, parse_student_answer, render_problem_json, AgentHandle, ParseTarget, Role, ScriptedAgent,
    ScriptedBehavior, SolvePolicy, ValidatePolicy,
};
use atad_core::metrics::{
    accuracy, bias_index, consistency_curve, fmt_pct, AccuracyTable, Cell, EvalRecord, FamilyMap, Grouping, Round,
    Split, OVERALL,
};
use atad_core::protocol::{run_trajectory, Agents, ProtocolConfig, TrajectoryOutcome};
use atad_core::store::{BenchmarkSet, StoredItem};
use atad_core::taskspec::{grade, Verdict};
use atad_core::{AnswerKey, DifficultyTier, StudentAnswer, TaskTypeId};

fn task_strategy() -> impl Strategy<Value = TaskTypeId> {
    (0usize..7).prop_map(|i| TaskTypeId::ALL[i])
}

fn target_of(inst: &atad_core::ProblemInstance) -> ParseTarget {
    ParseTarget {
        task: inst.task,
        lineage_id: inst.lineage_id.clone(),
        instance_id: inst.instance_id.clone(),
        tier: inst.tier(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rendered_problems_parse_back(seed in any::<u64>(), task in task_strategy(), prefix in "[a-zA-Z .,:!\n]{0,40}", suffix in "[a-zA-Z .,:!\n]{0,40}") {
        let inst = common::random_instance(&mut ChaCha8Rng::seed_from_u64(seed), task);
        let text = format!("{prefix}{}{suffix}", render_problem_json(&inst));
        prop_assert_eq!(parse_problem(&text, &target_of(&inst)).unwrap(), inst);
    }

    #[test]
    fn grading_matches_key_equality(seed in any::<u64>(), task in task_strategy(), guess in 1u32..7, flag in any::<bool>()) {
        let inst = common::random_instance(&mut ChaCha8Rng::seed_from_u64(seed), task);
        let answer = match inst.answer_key {
            AnswerKey::Index(_) => AnswerKey::Index(guess),
            AnswerKey::Flag(_) => AnswerKey::Flag(flag),
        };
        let v = grade(&inst, &StudentAnswer::parsed(answer, "x"));
        prop_assert_eq!(v == Verdict::Correct, answer == inst.answer_key);
        prop_assert_eq!(grade(&inst, &StudentAnswer::unparsable("no idea")), Verdict::Unparsable);
    }

    #[test]
    fn student_answers_round_trip(guess in 1u32..6, task in task_strategy(), fence in any::<bool>()) {
        let (value, key) = if task == TaskTypeId::T2 {
            (serde_json::json!(guess % 2 == 0), AnswerKey::Flag(guess % 2 == 0))
        } else {
            (serde_json::json!(guess), AnswerKey::Index(guess))
        };
        let body = serde_json::json!({"answer": value, "explanation": "because"}).to_string();
        let text = if fence { format!("```json\n{body}\n```") } else { body };
        let ans = parse_student_answer(&text, task);
        prop_assert!(ans.parse_ok);
        prop_assert_eq!(ans.answer, Some(key));
    }

    #[test]
    fn benchmark_set_order_ignores_input_order(seed in any::<u64>(), n in 1usize..40, rot in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<StoredItem> = (0..n).map(|i| {
            let inst = common::random_instance(&mut rng, TaskTypeId::ALL[i % 7]);
            let item = atad_core::BenchmarkItem {
                lineage_id: inst.lineage_id.clone(),
                validation: atad_core::ValidationReport::approved(atad_core::ValidationPhase::Initial),
                is_final: i % 2 == 0,
                provenance: atad_core::Provenance {
                    teacher_model: "t".into(),
                    student_model: "s".into(),
                    orchestrator_model: "o".into(),
                    timestamps: Default::default(),
                    attempt_counts: Default::default(),
                },
                stop_reason: atad_core::StopReason::StudentFailed,
                instance: atad_core::ProblemInstance { instance_id: format!("{}-{i}", inst.instance_id), ..inst },
            };
            StoredItem { generator_tag: format!("g{}", i % 3), generator_family: "F".into(), item }
        }).collect();
        let mut shuffled = items.clone();
        shuffled.rotate_left(rot % n);
        shuffled.reverse();
        prop_assert_eq!(BenchmarkSet::new(items), BenchmarkSet::new(shuffled));
    }

    #[test]
    fn accuracy_tables_ignore_record_order(verdicts in prop::collection::vec((0usize..3, 0usize..7, 0u8..3), 1..200), rot in 0usize..200) {
        let records: Vec<EvalRecord> = verdicts.iter().enumerate().map(|(i, (m, t, v))| EvalRecord {
            model: format!("m{m}"),
            item_id: format!("i{i}"),
            lineage_id: format!("l{i}"),
            task: Some(TaskTypeId::ALL[*t]),
            tier: Some(DifficultyTier::Easy),
            generator: "g".into(),
            generator_family: "G".into(),
            is_final: true,
            split: Split::Final,
            verdict: [Verdict::Correct, Verdict::Incorrect, Verdict::Unparsable][*v as usize],
            raw_answer: None,
            error: None,
        }).collect();
        let mut shuffled = records.clone();
        shuffled.rotate_left(rot % records.len());
        let a = accuracy(&records, Grouping::ByTask).unwrap();
        let b = accuracy(&shuffled, Grouping::ByTask).unwrap();
        prop_assert_eq!(&a.cells, &b.cells);
        prop_assert_eq!(&a.groups, &b.groups);
        for (_, _, c) in a.iter() {
            prop_assert_eq!(c.accuracy() + c.difficulty(), Ratio::from_integer(1));
            prop_assert!(c.unparsable_n <= c.n - c.correct);
        }
    }

    #[test]
    fn bias_index_is_shift_invariant(accs in prop::collection::vec(0u64..=60, 6), shift in 0u64..=40) {
        let models = ["a1", "a2", "b1", "b2", "c1", "c2"];
        let mut fam = FamilyMap::default();
        for m in models {
            fam.insert(m, m[..1].to_uppercase());
        }
        let table = |s: u64| AccuracyTable::from_accuracies(
            Grouping::Overall,
            models.iter().zip(&accs).map(|(m, a)| (*m, OVERALL, Ratio::new(a + s, 100))),
        );
        let per = |s| ["A", "B", "C"].iter().map(|f| (f.to_string(), table(s))).collect::<BTreeMap<_, _>>();
        prop_assert_eq!(bias_index(&per(0), &fam).unwrap(), bias_index(&per(shift), &fam).unwrap());
    }

    #[test]
    fn constant_offsets_have_zero_band(base in prop::collection::vec(16u32..=48, 7), k in 1u32..16) {
        let round = |off: u32| Round {
            samples: 100,
            accuracy: TaskTypeId::ALL.iter().zip(&base).map(|(t, b)| (*t, f64::from(b + off) / 64.0)).collect(),
        };
        let curve = consistency_curve(&[round(k), round(0)], 1).unwrap();
        prop_assert_eq!(curve[0].band, 0.0);
        prop_assert_eq!(curve[0].mean_gap, f64::from(k) / 64.0);
        prop_assert_eq!(curve[1].band, 0.0);
    }

    #[test]
    fn pct_formatting_matches_float(num in 0u64..=100_000, den in 1u64..=100_000) {
        let r = Ratio::new(num.min(den), den);
        let exact = fmt_pct(atad_core::metrics::to_signed(r));
        let float = *r.numer() as f64 / *r.denom() as f64 * 100.0;
        prop_assert!((exact.parse::<f64>().unwrap() - float).abs() <= 0.005 + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectories_climb_a_tier_prefix(seed in any::<u64>(), rate in 0.0f64..1.0, rejects in 0u32..3, task in task_strategy()) {
        let mk = |role, b: ScriptedBehavior| AgentHandle::scripted(role, format!("{role}"), Arc::new(ScriptedAgent::new(b)));
        let agents = Agents {
            teacher: mk(Role::Teacher, ScriptedBehavior::new("t")),
            orchestrator: mk(Role::Orchestrator, ScriptedBehavior::new("o").with_validate(ValidatePolicy { reject_scaled_attempts: rejects, reject_initial_attempts: rejects, ..Default::default() })),
            student: mk(Role::Student, ScriptedBehavior::new("s").with_solve(SolvePolicy::Accuracy { rate, salt: seed })),
        };
        let cfg = ProtocolConfig { seed, ..Default::default() };
        let (outcome, counts) = run_trajectory(&cfg, &agents, task, 0, None).unwrap();
        let TrajectoryOutcome::Completed { trajectory } = outcome else {
            return Err(TestCaseError::fail("lineage did not complete"));
        };
        trajectory.check_invariants().map_err(TestCaseError::fail)?;
        let tiers = trajectory.tiers();
        prop_assert_eq!(&tiers[..], &DifficultyTier::ALL[..tiers.len()]);
        prop_assert_eq!(trajectory.finalized.tier(), *tiers.last().unwrap());
        prop_assert_eq!(counts.student_calls as usize, tiers.len());
        prop_assert!(counts.init_attempts == rejects + 1);
    }
}

#[test]
fn synthetic_bias_fixture_value() {
    // Same-family mean 0.85, other-family mean 0.65.
    let t = AccuracyTable::from_accuracies(
        Grouping::Overall,
        [("s1", OVERALL, Ratio::new(8, 10)), ("s2", OVERALL, Ratio::new(9, 10)), ("o1", OVERALL, Ratio::new(6, 10)), ("o2", OVERALL, Ratio::new(7, 10))],
    );
    let mut fam = FamilyMap::default();
    for (m, f) in [("s1", "S"), ("s2", "S"), ("o1", "O"), ("o2", "O")] {
        fam.insert(m, f);
    }
    let b = bias_index(&BTreeMap::from([("S".to_string(), t)]), &fam).unwrap();
    assert_eq!(b["S"], Ratio::new(1, 5));
}

#[test]
fn cell_from_ratio_keeps_value() {
    let c = Cell::from_ratio(Ratio::new(6, 8));
    assert_eq!(c.accuracy(), Ratio::new(3, 4));
}
