//! The generation protocol: initialization, adaptive difficulty scaling,
//! finalization, and campaigns over many lineages.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    build_feedback_prompt, build_generation_prompt, build_initial_validation_prompt,
    build_scaled_validation_prompt, parse_feedback, parse_problem, parse_validation, solve, AgentHandle,
    CallContext, GenerationRequest, ParseTarget, Role,
};
use crate::domain::{
    next_tier, AttemptCounts, BenchmarkItem, DifficultyTier, EscalationFeedback, LogicalTimestamps,
    ProblemInstance, Provenance, Stage, StageOutcome, StopReason, StudentAnswer, TaskTypeId, Trajectory,
    ValidationPhase, ValidationReport,
};
use crate::error::{AgentParseError, GatewayError, ProtocolError};
use crate::taskspec::{grade, sample_challenge_factor, topics_for, ChallengeFactor, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub max_init_loops: u32,
    pub max_student_loops: u32,
    pub max_regen_per_tier: u32,
    pub samples_per_task: u32,
    pub tasks: Vec<TaskTypeId>,
    pub seed: u64,
    /// Probability that a T2 lineage targets a coherent order.
    pub t2_positive_rate: f64,
    /// Lineages run concurrently.
    pub concurrency: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            max_init_loops: 5,
            max_student_loops: 4,
            max_regen_per_tier: 3,
            samples_per_task: 100,
            tasks: TaskTypeId::ALL.to_vec(),
            seed: 0,
            t2_positive_rate: 0.5,
            concurrency: 1,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: &str| Err(ProtocolError::Config(m.to_string()));
        if self.max_init_loops == 0 || self.max_student_loops == 0 || self.max_regen_per_tier == 0 {
            return bad("loop caps must be at least 1");
        }
        if self.samples_per_task == 0 {
            return bad("samples_per_task must be at least 1");
        }
        if self.tasks.is_empty() {
            return bad("at least one task is required");
        }
        if !(0.0..=1.0).contains(&self.t2_positive_rate) {
            return bad("t2_positive_rate must lie in [0, 1]");
        }
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1");
        }
        Ok(())
    }

    /// Tasks in canonical order without duplicates.
    pub fn task_list(&self) -> Vec<TaskTypeId> {
        let mut t = self.tasks.clone();
        t.sort();
        t.dedup();
        t
    }
}

#[derive(Debug, Clone)]
pub struct Agents {
    pub teacher: AgentHandle,
    pub orchestrator: AgentHandle,
    pub student: AgentHandle,
}

impl Agents {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        for (h, role) in [
            (&self.teacher, Role::Teacher),
            (&self.orchestrator, Role::Orchestrator),
            (&self.student, Role::Student),
        ] {
            if h.role != role {
                return Err(ProtocolError::Config(format!("agent '{}' serves {} but is bound as {role}", h.name, h.role)));
            }
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for one lineage, derived from the campaign seed, task and sample index.
pub fn lineage_seed(seed: u64, task: TaskTypeId, index: u32) -> u64 {
    splitmix64(splitmix64(seed ^ (task.ordinal() as u64 + 1).wrapping_mul(0xA24B_AED4_963E_E407)) ^ u64::from(index))
}

pub fn lineage_id(task: TaskTypeId, seed: u64, index: u32) -> String {
    format!("{task}-s{seed}-{index:04}")
}

pub fn instance_id(lineage_id: &str, tier: DifficultyTier, attempt: u32) -> String {
    format!("{lineage_id}-{tier}-a{attempt}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LineageStatus {
    InProgress,
    Completed { trajectory: Box<Trajectory> },
    Skipped { attempts: u32 },
}

/// Everything needed to resume a lineage. Written after every stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageState {
    pub lineage_id: String,
    pub task: TaskTypeId,
    pub index: u32,
    pub topic: String,
    pub factor: Option<ChallengeFactor>,
    pub t2_target: Option<bool>,
    pub stages: Vec<Stage>,
    pub counts: AttemptCounts,
    /// Completed model calls in this lineage; the logical clock.
    pub clock: u32,
    pub status: LineageStatus,
}

impl LineageState {
    /// Fresh state with topic, factor and T2 target drawn from the lineage seed.
    pub fn new(cfg: &ProtocolConfig, task: TaskTypeId, index: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(lineage_seed(cfg.seed, task, index));
        let topic = topics_for(task).labels().choose(&mut rng).expect("every task has topics").to_string();
        let factor = sample_challenge_factor(task, &mut rng);
        let t2_target = (task == TaskTypeId::T2).then(|| rng.gen_bool(cfg.t2_positive_rate));
        Self::with_parts(lineage_id(task, cfg.seed, index), task, index, topic, factor, t2_target)
    }

    pub fn with_parts(
        lineage_id: String,
        task: TaskTypeId,
        index: u32,
        topic: String,
        factor: Option<ChallengeFactor>,
        t2_target: Option<bool>,
    ) -> Self {
        Self {
            lineage_id,
            task,
            index,
            topic,
            factor,
            t2_target,
            stages: Vec::new(),
            counts: AttemptCounts::default(),
            clock: 0,
            status: LineageStatus::InProgress,
        }
    }

    fn request(&self, difficulty: DifficultyTier, attempt: u32) -> GenerationRequest {
        let mut req = GenerationRequest::new(self.task, self.topic.clone(), difficulty);
        req.factor = self.factor.clone();
        req.t2_target = self.t2_target;
        req.lineage_id = self.lineage_id.clone();
        req.attempt = attempt;
        req
    }

    fn call(&mut self, agent: &AgentHandle, prompt: &crate::agent::PromptText, ctx: &CallContext<'_>) -> Result<String, GatewayError> {
        let out = agent.complete(prompt, ctx)?;
        self.clock += 1;
        Ok(out)
    }
}

fn malformed_feedback(err: &AgentParseError) -> String {
    format!("The previous response could not be used: {err}. Return a single JSON object that follows the required structure exactly.")
}

/// Generates one candidate and asks the Orchestrator about it.
/// `Ok(Err(feedback))` is a rejection, structural or by the Orchestrator.
fn candidate(
    st: &mut LineageState,
    agents: &Agents,
    req: &GenerationRequest,
) -> Result<Result<(ProblemInstance, ValidationReport, u32), String>, GatewayError> {
    let raw = st.call(&agents.teacher, &build_generation_prompt(req), &CallContext::Generate(req))?;
    let generated_at = st.clock;
    let target = ParseTarget {
        task: st.task,
        lineage_id: st.lineage_id.clone(),
        instance_id: instance_id(&st.lineage_id, req.difficulty, req.attempt),
        tier: req.difficulty,
    };
    let inst = match parse_problem(&raw, &target) {
        Ok(i) => i,
        Err(e) => {
            st.counts.malformed += 1;
            return Ok(Err(malformed_feedback(&e)));
        }
    };
    let (prompt, phase, ctx) = if req.difficulty == DifficultyTier::Easy {
        (
            build_initial_validation_prompt(&inst),
            ValidationPhase::Initial,
            CallContext::ValidateInitial { instance: &inst, attempt: req.attempt },
        )
    } else {
        (
            build_scaled_validation_prompt(&inst, req.difficulty),
            ValidationPhase::Scaled,
            CallContext::ValidateScaled { instance: &inst, tier: req.difficulty, attempt: req.attempt },
        )
    };
    let raw = st.call(&agents.orchestrator, &prompt, &ctx)?;
    // An unreadable verdict cannot approve anything.
    let report = parse_validation(&raw, phase).unwrap_or_else(|e| {
        ValidationReport::rejected(phase, format!("Validator output could not be parsed ({e}); please regenerate."))
    });
    if report.approved {
        st.counts.approvals += 1;
        Ok(Ok((inst, report, generated_at)))
    } else {
        st.counts.rejections += 1;
        Ok(Err(report.feedback.unwrap_or_default()))
    }
}

/// Produces the approved Easy stage. Rejection feedback is threaded into the
/// next generation prompt; topic and factor stay fixed across attempts.
pub fn run_initialization(cfg: &ProtocolConfig, agents: &Agents, st: &mut LineageState) -> Result<(), ProtocolError> {
    debug_assert!(st.stages.is_empty());
    let mut feedback = None;
    for attempt in 1..=cfg.max_init_loops {
        st.counts.init_attempts += 1;
        let mut req = st.request(DifficultyTier::Easy, attempt);
        req.rejection_feedback = feedback.take();
        match candidate(st, agents, &req)? {
            Ok((instance, validation, generated_at_call)) => {
                st.stages.push(Stage {
                    instance,
                    validation,
                    student: None,
                    outcome: StageOutcome::NotAttempted,
                    generated_at_call,
                });
                return Ok(());
            }
            Err(f) => feedback = Some(f),
        }
    }
    Err(ProtocolError::InitExhausted { attempts: cfg.max_init_loops })
}

fn finalize(st: &LineageState, agents: &Agents, stage: &Stage, stop_reason: StopReason) -> Trajectory {
    let finalized = BenchmarkItem {
        instance: stage.instance.clone(),
        validation: stage.validation.clone(),
        lineage_id: st.lineage_id.clone(),
        is_final: true,
        provenance: Provenance {
            teacher_model: agents.teacher.name.clone(),
            student_model: agents.student.name.clone(),
            orchestrator_model: agents.orchestrator.name.clone(),
            timestamps: LogicalTimestamps { generated_at_call: stage.generated_at_call, finalized_at_call: st.clock },
            attempt_counts: st.counts,
        },
        stop_reason,
    };
    Trajectory {
        lineage_id: st.lineage_id.clone(),
        task: st.task,
        stages: st.stages.clone(),
        finalized,
        stop_reason,
    }
}

fn fallback_feedback(raw: &str) -> EscalationFeedback {
    EscalationFeedback {
        analysis: raw.trim().to_string(),
        suggestions: Vec::new(),
        difficulty_increase: String::new(),
    }
}

/// Walks the difficulty ladder from the approved base until a stop rule
/// fires. `checkpoint` is called after every stage change.
pub fn run_scaling(
    cfg: &ProtocolConfig,
    agents: &Agents,
    st: &mut LineageState,
    checkpoint: &mut dyn FnMut(&LineageState) -> Result<(), ProtocolError>,
) -> Result<Trajectory, ProtocolError> {
    if st.stages.first().map(|s| s.instance.tier()) != Some(DifficultyTier::Easy) {
        return Err(ProtocolError::Checkpoint(format!("{}: scaling requires an approved easy stage", st.lineage_id)));
    }
    loop {
        let last = st.stages.last().expect("non-empty").clone();
        match last.outcome {
            StageOutcome::NotAttempted => {
                let answer: StudentAnswer = solve(&agents.student, &last.instance)?;
                st.clock += 1;
                st.counts.student_calls += 1;
                let outcome = match grade(&last.instance, &answer) {
                    Verdict::Correct => StageOutcome::Solved,
                    Verdict::Incorrect | Verdict::Unparsable => StageOutcome::Failed,
                };
                let stage = st.stages.last_mut().expect("non-empty");
                stage.student = Some(answer);
                stage.outcome = outcome;
                checkpoint(st)?;
            }
            StageOutcome::Failed => return Ok(finalize(st, agents, &last, StopReason::StudentFailed)),
            StageOutcome::Solved => {
                let tier = last.instance.tier();
                let Some(next) = next_tier(tier).filter(|_| st.counts.student_calls < cfg.max_student_loops) else {
                    return Ok(finalize(st, agents, &last, StopReason::StudentLoopCapReached));
                };
                let student = last.student.clone().expect("solved stage has an answer");
                let raw = st.call(
                    &agents.orchestrator,
                    &build_feedback_prompt(&last.instance, &student),
                    &CallContext::Feedback { instance: &last.instance, student: &student },
                )?;
                let escalation = parse_feedback(&raw).unwrap_or_else(|_| fallback_feedback(&raw));
                let mut rejection = None;
                let mut approved = None;
                for attempt in 1..=cfg.max_regen_per_tier {
                    st.counts.regen_attempts += 1;
                    let mut req = st.request(next, attempt);
                    req.escalation = Some(escalation.clone());
                    req.previous = Some(last.instance.clone());
                    req.soften = attempt > 1;
                    req.rejection_feedback = rejection.take();
                    match candidate(st, agents, &req)? {
                        Ok(ok) => {
                            approved = Some(ok);
                            break;
                        }
                        Err(f) => rejection = Some(f),
                    }
                }
                match approved {
                    Some((instance, validation, generated_at_call)) => {
                        st.stages.push(Stage {
                            instance,
                            validation,
                            student: None,
                            outcome: StageOutcome::NotAttempted,
                            generated_at_call,
                        });
                        checkpoint(st)?;
                    }
                    None => return Ok(finalize(st, agents, &last, StopReason::RegenerationExhausted)),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrajectoryOutcome {
    Completed { trajectory: Box<Trajectory> },
    Skipped { lineage_id: String, attempts: u32 },
    Aborted { lineage_id: String, error: String },
}

impl TrajectoryOutcome {
    pub fn lineage_id(&self) -> &str {
        match self {
            TrajectoryOutcome::Completed { trajectory } => &trajectory.lineage_id,
            TrajectoryOutcome::Skipped { lineage_id, .. } | TrajectoryOutcome::Aborted { lineage_id, .. } => lineage_id,
        }
    }
}

/// Per-lineage JSON checkpoints in one directory.
#[derive(Debug, Clone)]
pub struct CheckpointDir {
    dir: PathBuf,
}

impl CheckpointDir {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, ProtocolError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| ProtocolError::Checkpoint(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn path_for(&self, lineage_id: &str) -> PathBuf {
        self.dir.join(format!("{lineage_id}.json"))
    }

    pub fn load(&self, lineage_id: &str) -> Result<Option<LineageState>, ProtocolError> {
        let path = self.path_for(lineage_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(ProtocolError::Checkpoint(format!("{}: {e}", path.display()))),
        };
        let st: LineageState = serde_json::from_str(&text)
            .map_err(|e| ProtocolError::Checkpoint(format!("{}: {e}", path.display())))?;
        if st.lineage_id != lineage_id {
            return Err(ProtocolError::Checkpoint(format!("{} holds lineage {}", path.display(), st.lineage_id)));
        }
        Ok(Some(st))
    }

    pub fn save(&self, st: &LineageState) -> Result<(), ProtocolError> {
        let path = self.path_for(&st.lineage_id);
        let tmp = path.with_extension("json.tmp");
        let err = |e: std::io::Error| ProtocolError::Checkpoint(format!("{}: {e}", path.display()));
        let text = serde_json::to_string(st).map_err(|e| ProtocolError::Checkpoint(e.to_string()))?;
        fs::write(&tmp, text).map_err(err)?;
        fs::rename(&tmp, &path).map_err(err)
    }
}

/// One lineage from seed to outcome, resuming from `checkpoints` when a
/// state file exists. Returns the outcome with the lineage's call counts.
pub fn run_trajectory(
    cfg: &ProtocolConfig,
    agents: &Agents,
    task: TaskTypeId,
    index: u32,
    checkpoints: Option<&CheckpointDir>,
) -> Result<(TrajectoryOutcome, AttemptCounts), ProtocolError> {
    let id = lineage_id(task, cfg.seed, index);
    let mut st = match checkpoints.map(|c| c.load(&id)).transpose()?.flatten() {
        Some(st) => st,
        None => LineageState::new(cfg, task, index),
    };
    let mut save = |s: &LineageState| checkpoints.map_or(Ok(()), |c| c.save(s));

    match &st.status {
        LineageStatus::Completed { trajectory } => {
            return Ok((TrajectoryOutcome::Completed { trajectory: trajectory.clone() }, st.counts))
        }
        LineageStatus::Skipped { attempts } => {
            return Ok((TrajectoryOutcome::Skipped { lineage_id: id, attempts: *attempts }, st.counts))
        }
        LineageStatus::InProgress => {}
    }

    let result = (|| {
        if st.stages.is_empty() {
            let saved = st.clone();
            if let Err(e) = run_initialization(cfg, agents, &mut st) {
                if matches!(e, ProtocolError::Gateway(_)) {
                    // Initialization restarts from scratch on resume.
                    st = saved;
                }
                return Err(e);
            }
            save(&st)?;
        }
        run_scaling(cfg, agents, &mut st, &mut save)
    })();

    match result {
        Ok(trajectory) => {
            st.status = LineageStatus::Completed { trajectory: Box::new(trajectory.clone()) };
            save(&st)?;
            Ok((TrajectoryOutcome::Completed { trajectory: Box::new(trajectory) }, st.counts))
        }
        Err(ProtocolError::InitExhausted { attempts }) => {
            st.status = LineageStatus::Skipped { attempts };
            save(&st)?;
            Ok((TrajectoryOutcome::Skipped { lineage_id: id, attempts }, st.counts))
        }
        Err(ProtocolError::Gateway(e)) => Ok((TrajectoryOutcome::Aborted { lineage_id: id, error: e.to_string() }, st.counts)),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub lineages: u32,
    pub completed: u32,
    pub skipped: u32,
    pub aborted: u32,
    pub init_attempts_total: u32,
    pub regen_attempts_total: u32,
    pub student_calls_total: u32,
    pub approvals: u32,
    pub rejections: u32,
    pub malformed: u32,
    pub wire_errors: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignResult {
    /// Completed trajectories in (task, index) order.
    pub trajectories: Vec<Trajectory>,
    pub outcomes: Vec<TrajectoryOutcome>,
    pub stats: CampaignStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ProgressEvent {
    CampaignStarted { lineages: u32, concurrency: usize },
    LineageCompleted { lineage_id: String, final_tier: DifficultyTier, stop_reason: StopReason, stages: usize },
    LineageSkipped { lineage_id: String, attempts: u32 },
    LineageAborted { lineage_id: String, error: String },
    CampaignFinished { stats: CampaignStats },
}

pub trait EventSink: Send + Sync {
    fn emit(&self, event: &ProgressEvent);
}

/// Writes one JSON object per line.
pub struct JsonLinesSink<W: Write + Send> {
    out: Mutex<W>,
}

impl<W: Write + Send> JsonLinesSink<W> {
    pub fn new(out: W) -> Self {
        Self { out: Mutex::new(out) }
    }

    pub fn into_inner(self) -> W {
        self.out.into_inner().unwrap()
    }
}

impl<W: Write + Send> EventSink for JsonLinesSink<W> {
    fn emit(&self, event: &ProgressEvent) {
        let mut out = self.out.lock().unwrap();
        if let Ok(line) = serde_json::to_string(event) {
            let _ = writeln!(out, "{line}");
            let _ = out.flush();
        }
    }
}

/// Discards every event.
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _: &ProgressEvent) {}
}

/// A campaign: protocol settings, bound agents, and optional checkpointing
/// and progress reporting.
pub struct Campaign<'a> {
    pub config: ProtocolConfig,
    pub agents: Agents,
    pub checkpoints: Option<CheckpointDir>,
    pub events: &'a dyn EventSink,
}

impl<'a> Campaign<'a> {
    pub fn new(config: ProtocolConfig, agents: Agents) -> Self {
        Self { config, agents, checkpoints: None, events: &NullSink }
    }

    pub fn with_checkpoints(mut self, dir: CheckpointDir) -> Self {
        self.checkpoints = Some(dir);
        self
    }

    pub fn with_events(mut self, events: &'a dyn EventSink) -> Self {
        self.events = events;
        self
    }

    pub fn run(&self) -> Result<CampaignResult, ProtocolError> {
        let cfg = &self.config;
        cfg.validate()?;
        self.agents.validate()?;
        let jobs: Vec<(TaskTypeId, u32)> = cfg
            .task_list()
            .into_iter()
            .flat_map(|t| (0..cfg.samples_per_task).map(move |i| (t, i)))
            .collect();
        self.events.emit(&ProgressEvent::CampaignStarted { lineages: jobs.len() as u32, concurrency: cfg.concurrency });

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.concurrency)
            .build()
            .map_err(|e| ProtocolError::Config(e.to_string()))?;
        let results: Vec<Result<(TrajectoryOutcome, AttemptCounts), ProtocolError>> = pool.install(|| {
            use rayon::prelude::*;
            jobs.par_iter()
                .map(|&(task, index)| {
                    let r = run_trajectory(cfg, &self.agents, task, index, self.checkpoints.as_ref());
                    if let Ok((outcome, _)) = &r {
                        self.events.emit(&event_for(outcome));
                    }
                    r
                })
                .collect()
        });

        let mut stats = CampaignStats::default();
        let mut outcomes = Vec::with_capacity(results.len());
        for r in results {
            let (outcome, counts) = r?;
            stats.lineages += 1;
            stats.init_attempts_total += counts.init_attempts;
            stats.regen_attempts_total += counts.regen_attempts;
            stats.student_calls_total += counts.student_calls;
            stats.approvals += counts.approvals;
            stats.rejections += counts.rejections;
            stats.malformed += counts.malformed;
            match &outcome {
                TrajectoryOutcome::Completed { .. } => stats.completed += 1,
                TrajectoryOutcome::Skipped { .. } => stats.skipped += 1,
                TrajectoryOutcome::Aborted { .. } => {
                    stats.aborted += 1;
                    stats.wire_errors += 1;
                }
            }
            outcomes.push(outcome);
        }
        self.events.emit(&ProgressEvent::CampaignFinished { stats });
        if stats.completed == 0 {
            return Err(ProtocolError::AllTrajectoriesFailed);
        }
        let trajectories = outcomes
            .iter()
            .filter_map(|o| match o {
                TrajectoryOutcome::Completed { trajectory } => Some((**trajectory).clone()),
                _ => None,
            })
            .collect();
        Ok(CampaignResult { trajectories, outcomes, stats })
    }
}

fn event_for(outcome: &TrajectoryOutcome) -> ProgressEvent {
    match outcome {
        TrajectoryOutcome::Completed { trajectory } => ProgressEvent::LineageCompleted {
            lineage_id: trajectory.lineage_id.clone(),
            final_tier: trajectory.finalized.tier(),
            stop_reason: trajectory.stop_reason,
            stages: trajectory.stages.len(),
        },
        TrajectoryOutcome::Skipped { lineage_id, attempts } => {
            ProgressEvent::LineageSkipped { lineage_id: lineage_id.clone(), attempts: *attempts }
        }
        TrajectoryOutcome::Aborted { lineage_id, error } => {
            ProgressEvent::LineageAborted { lineage_id: lineage_id.clone(), error: error.clone() }
        }
    }
}

/// Convenience wrapper for a campaign without checkpoints or events.
pub fn run_campaign(cfg: &ProtocolConfig, agents: &Agents) -> Result<CampaignResult, ProtocolError> {
    Campaign::new(cfg.clone(), agents.clone()).run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::agent::scripted::{CallKind, FailureEntry};
    use crate::agent::{ScriptedAgent, ScriptedBehavior, SolvePolicy, ValidatePolicy};

    struct Rig {
        teacher: Arc<ScriptedAgent>,
        orchestrator: Arc<ScriptedAgent>,
        agents: Agents,
    }

    fn rig(validate: ValidatePolicy, solve: SolvePolicy) -> Rig {
        let teacher = Arc::new(ScriptedAgent::new(ScriptedBehavior::new("teacher")));
        let orchestrator = Arc::new(ScriptedAgent::new(ScriptedBehavior::new("orch").with_validate(validate)));
        let student = Arc::new(ScriptedAgent::new(ScriptedBehavior::new("student").with_solve(solve)));
        let agents = Agents {
            teacher: AgentHandle::scripted(Role::Teacher, "teacher-m", teacher.clone()),
            orchestrator: AgentHandle::scripted(Role::Orchestrator, "orch-m", orchestrator.clone()),
            student: AgentHandle::scripted(Role::Student, "student-m", student),
        };
        Rig { teacher, orchestrator, agents }
    }

    fn cfg() -> ProtocolConfig {
        ProtocolConfig { samples_per_task: 3, seed: 11, ..Default::default() }
    }

    fn state(task: TaskTypeId) -> LineageState {
        LineageState::new(&cfg(), task, 0)
    }

    #[test]
    fn init_happy_path_uses_one_generation() {
        let r = rig(ValidatePolicy::default(), SolvePolicy::AlwaysCorrect);
        let mut st = state(TaskTypeId::T1);
        run_initialization(&cfg(), &r.agents, &mut st).unwrap();
        assert_eq!(r.teacher.call_count(CallKind::Generate), 1);
        assert_eq!(st.stages.len(), 1);
        assert!(st.stages[0].validation.approved);
        assert_eq!(st.stages[0].instance.tier(), DifficultyTier::Easy);
    }

    #[test]
    fn init_threads_rejection_feedback() {
        let r = rig(ValidatePolicy { reject_initial_attempts: 2, ..Default::default() }, SolvePolicy::AlwaysCorrect);
        let mut st = state(TaskTypeId::T1);
        run_initialization(&cfg(), &r.agents, &mut st).unwrap();
        assert_eq!(r.teacher.call_count(CallKind::Generate), 3);
        assert_eq!(st.counts.rejections, 2);
        assert_eq!(st.counts.init_attempts, 3);
    }

    #[test]
    fn init_exhausts_at_cap() {
        let r = rig(ValidatePolicy { reject_all: true, ..Default::default() }, SolvePolicy::AlwaysCorrect);
        let mut st = state(TaskTypeId::T1);
        let c = ProtocolConfig { max_init_loops: 4, ..cfg() };
        assert!(matches!(run_initialization(&c, &r.agents, &mut st), Err(ProtocolError::InitExhausted { attempts: 4 })));
        assert_eq!(r.teacher.call_count(CallKind::Generate), 4);
    }

    fn walk(validate: ValidatePolicy, solve: SolvePolicy) -> (Trajectory, Rig) {
        let r = rig(validate, solve);
        let mut st = state(TaskTypeId::T6);
        run_initialization(&cfg(), &r.agents, &mut st).unwrap();
        let t = run_scaling(&cfg(), &r.agents, &mut st, &mut |_| Ok(())).unwrap();
        t.check_invariants().unwrap();
        (t, r)
    }

    #[test]
    fn failing_base_finalizes_at_easy() {
        let (t, _) = walk(ValidatePolicy::default(), SolvePolicy::AlwaysWrong);
        assert_eq!(t.tiers(), vec![DifficultyTier::Easy]);
        assert_eq!(t.stop_reason, StopReason::StudentFailed);
    }

    #[test]
    fn ladder_stops_at_first_failure() {
        let (t, _) = walk(ValidatePolicy::default(), SolvePolicy::SolveBelow { tier: DifficultyTier::Extreme });
        assert_eq!(t.tiers(), vec![DifficultyTier::Easy, DifficultyTier::Hard, DifficultyTier::Extreme]);
        assert_eq!(t.finalized.tier(), DifficultyTier::Extreme);
        assert_eq!(t.stop_reason, StopReason::StudentFailed);
    }

    #[test]
    fn solving_everything_reaches_impossible() {
        let (t, r) = walk(ValidatePolicy::default(), SolvePolicy::AlwaysCorrect);
        assert_eq!(t.tiers(), DifficultyTier::ALL.to_vec());
        assert_eq!(t.stop_reason, StopReason::StudentLoopCapReached);
        // Feedback on each success below the top tier.
        assert_eq!(r.orchestrator.call_count(CallKind::Feedback), 3);
    }

    #[test]
    fn student_cap_stops_early() {
        let r = rig(ValidatePolicy::default(), SolvePolicy::AlwaysCorrect);
        let c = ProtocolConfig { max_student_loops: 2, ..cfg() };
        let mut st = state(TaskTypeId::T3);
        run_initialization(&c, &r.agents, &mut st).unwrap();
        let t = run_scaling(&c, &r.agents, &mut st, &mut |_| Ok(())).unwrap();
        assert_eq!(t.tiers(), vec![DifficultyTier::Easy, DifficultyTier::Hard]);
        assert_eq!(t.stop_reason, StopReason::StudentLoopCapReached);
    }

    #[test]
    fn regeneration_exhaustion_keeps_last_solved() {
        let (t, r) = walk(
            ValidatePolicy { reject_tiers: vec![DifficultyTier::Extreme], ..Default::default() },
            SolvePolicy::AlwaysCorrect,
        );
        assert_eq!(t.tiers(), vec![DifficultyTier::Easy, DifficultyTier::Hard]);
        assert_eq!(t.stop_reason, StopReason::RegenerationExhausted);
        assert_eq!(t.finalized.tier(), DifficultyTier::Hard);
        let extreme_gens = r
            .teacher
            .calls()
            .iter()
            .filter(|c| c.kind == CallKind::Generate && c.tier == DifficultyTier::Extreme)
            .count();
        assert_eq!(extreme_gens, 3);
    }

    #[test]
    fn softening_keeps_tier_label() {
        let r = rig(ValidatePolicy { reject_scaled_attempts: 1, ..Default::default() }, SolvePolicy::AlwaysCorrect);
        let mut st = state(TaskTypeId::T1);
        run_initialization(&cfg(), &r.agents, &mut st).unwrap();
        let t = run_scaling(&cfg(), &r.agents, &mut st, &mut |_| Ok(())).unwrap();
        assert_eq!(t.tiers(), DifficultyTier::ALL.to_vec());
        for s in &t.stages[1..] {
            assert!(s.instance.instance_id.ends_with("-a2"), "{}", s.instance.instance_id);
            assert!(s.instance.meta.anomaly_type.contains("softened"));
        }
    }

    #[test]
    fn lineage_draws_are_deterministic() {
        let a = LineageState::new(&cfg(), TaskTypeId::T2, 7);
        let b = LineageState::new(&cfg(), TaskTypeId::T2, 7);
        assert_eq!(a, b);
        assert!(a.t2_target.is_some());
        assert!(topics_for(TaskTypeId::T2).contains(&a.topic));
        assert_eq!(a.lineage_id, "T2-s11-0007");
    }

    #[test]
    fn campaign_counts_skips() {
        let r = rig(ValidatePolicy { reject_lineages: vec!["T1-s11-0004".into()], ..Default::default() }, SolvePolicy::AlwaysCorrect);
        let c = ProtocolConfig { samples_per_task: 10, tasks: vec![TaskTypeId::T1], ..cfg() };
        let res = run_campaign(&c, &r.agents).unwrap();
        assert_eq!(res.trajectories.len(), 9);
        assert_eq!(res.stats.skipped, 1);
        assert_eq!(res.outcomes.len(), 10);
    }

    #[test]
    fn all_failed_campaign_errors() {
        let r = rig(ValidatePolicy { reject_all: true, ..Default::default() }, SolvePolicy::AlwaysCorrect);
        let c = ProtocolConfig { samples_per_task: 2, tasks: vec![TaskTypeId::T5], ..cfg() };
        assert!(matches!(run_campaign(&c, &r.agents), Err(ProtocolError::AllTrajectoriesFailed)));
    }

    #[test]
    fn aborted_lineage_resumes_from_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let ck = CheckpointDir::new(dir.path()).unwrap();
        let c = ProtocolConfig { samples_per_task: 1, tasks: vec![TaskTypeId::T4], ..cfg() };

        let reference = {
            let r = rig(ValidatePolicy::default(), SolvePolicy::AlwaysCorrect);
            run_trajectory(&c, &r.agents, TaskTypeId::T4, 0, None).unwrap()
        };

        let mut flaky = ScriptedBehavior::new("student");
        flaky.failures.push(FailureEntry { kind: Some(CallKind::Solve), lineage: None, times: None });
        let mut r = rig(ValidatePolicy::default(), SolvePolicy::AlwaysCorrect);
        r.agents.student = AgentHandle::scripted(Role::Student, "student-m", Arc::new(ScriptedAgent::new(flaky)));
        let (first, _) = run_trajectory(&c, &r.agents, TaskTypeId::T4, 0, Some(&ck)).unwrap();
        assert!(matches!(first, TrajectoryOutcome::Aborted { .. }));
        let saved = ck.load("T4-s11-0000").unwrap().unwrap();
        assert_eq!(saved.stages.len(), 1);

        let fresh = rig(ValidatePolicy::default(), SolvePolicy::AlwaysCorrect);
        let resumed = run_trajectory(&c, &fresh.agents, TaskTypeId::T4, 0, Some(&ck)).unwrap();
        assert_eq!(resumed, reference);
        // The base stage came from the checkpoint, so initialization was not repeated.
        assert_eq!(fresh.teacher.call_count(CallKind::Generate), 3);

        let again = rig(ValidatePolicy::default(), SolvePolicy::AlwaysCorrect);
        assert_eq!(run_trajectory(&c, &again.agents, TaskTypeId::T4, 0, Some(&ck)).unwrap(), reference);
        assert!(again.teacher.calls().is_empty());
    }

    #[test]
    fn events_are_json_lines() {
        let r = rig(ValidatePolicy::default(), SolvePolicy::AlwaysWrong);
        let sink = JsonLinesSink::new(Vec::new());
        let c = ProtocolConfig { samples_per_task: 2, tasks: vec![TaskTypeId::T7], ..cfg() };
        Campaign::new(c, r.agents.clone()).with_events(&sink).run().unwrap();
        let text = String::from_utf8(sink.into_inner()).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0]["event"], "campaign_started");
        assert_eq!(lines[3]["event"], "campaign_finished");
    }

    #[test]
    fn config_validation() {
        assert!(ProtocolConfig { max_init_loops: 0, ..cfg() }.validate().is_err());
        assert!(ProtocolConfig { tasks: vec![], ..cfg() }.validate().is_err());
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn role_mismatch_is_rejected() {
        let mut r = rig(ValidatePolicy::default(), SolvePolicy::AlwaysCorrect);
        r.agents.student.role = Role::Teacher;
        assert!(r.agents.validate().is_err());
    }
}
