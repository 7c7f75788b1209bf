//! End-to-end runs: a campaign written to a store, and model evaluation
//! over a store.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::CampaignConfig;
use crate::error::{MetricsError, RunError, StoreError};
use crate::metrics::{evaluate_model, EvalRecord, Split};
use crate::protocol::{Campaign, CampaignStats, CheckpointDir, EventSink};
use crate::store::{
    load_benchmark, AgentIdentities, BenchmarkSet, BenchmarkStore, Filter, LoadMode, Manifest, SCHEMA_VERSION,
};
use crate::taskspec::TASK_RESOURCES_VERSION;
use crate::DifficultyTier;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerateSummary {
    pub store_dir: PathBuf,
    pub items: usize,
    pub stats: CampaignStats,
}

/// Checkpoints live outside the generator directory, keyed by the content
/// hash so a changed config never resumes stale lineages.
pub fn checkpoint_dir(out_root: &Path, cfg: &CampaignConfig) -> PathBuf {
    out_root.join(".checkpoints").join(&cfg.generator_tag).join(&cfg.content_hash()[..16])
}

/// Runs the campaign and rewrites `<out_root>/<generator_tag>/`.
pub fn generate(
    cfg: &CampaignConfig,
    out_root: &Path,
    events: &dyn EventSink,
    created_at_unix_ms: u64,
) -> Result<GenerateSummary, RunError> {
    let agents = cfg.build_agents()?;
    let identities = AgentIdentities {
        teacher: agents.teacher.name.clone(),
        orchestrator: agents.orchestrator.name.clone(),
        student: agents.student.name.clone(),
    };
    let ckpt = CheckpointDir::new(checkpoint_dir(out_root, cfg)).map_err(RunError::Protocol)?;
    let result = Campaign::new(cfg.protocol.clone(), agents).with_checkpoints(ckpt).with_events(events).run()?;

    let mut store = BenchmarkStore::create(out_root, &cfg.generator_tag)?;
    let mut items = 0;
    for t in &result.trajectories {
        items += store.append_trajectory(t)?.len();
    }
    store.write_manifest(&Manifest {
        schema_version: SCHEMA_VERSION,
        generator_tag: cfg.generator_tag.clone(),
        generator_family: cfg.generator_family.clone(),
        seed: cfg.protocol.seed,
        config_hash: cfg.content_hash(),
        agents: identities,
        resources_version: TASK_RESOURCES_VERSION.to_string(),
        created_at_unix_ms,
    })?;
    store.sync()?;
    Ok(GenerateSummary { store_dir: store.dir().to_path_buf(), items, stats: result.stats })
}

/// Base items are the Easy stage of each lineage; final items are the
/// retained last stage.
pub fn split_sets(set: &BenchmarkSet) -> (BenchmarkSet, BenchmarkSet) {
    let base = set.items.iter().filter(|s| s.item.tier() == DifficultyTier::Easy).cloned().collect();
    let fin = set.items.iter().filter(|s| s.item.is_final).cloned().collect();
    (BenchmarkSet::new(base), BenchmarkSet::new(fin))
}

/// Evaluates every configured model on the store at `store_path`: every
/// stored stage once, or only final items when `final_only` is set.
pub fn evaluate(
    cfg: &CampaignConfig,
    store_path: &Path,
    filter: &Filter,
    concurrency: usize,
) -> Result<Vec<EvalRecord>, RunError> {
    let models = cfg.build_models()?;
    let loaded = load_benchmark(store_path, filter, LoadMode::Strict)?;
    let final_only = cfg.evaluation.final_only || filter.final_only;
    let (set, split) = if final_only { (split_sets(&loaded.set).1, Split::Final) } else { (loaded.set, Split::All) };
    let mut records = Vec::new();
    for m in &models {
        records.extend(evaluate_model(m, &set, split, concurrency)?);
    }
    if records.is_empty() {
        return Err(RunError::NoRecords);
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<(), StoreError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
    }
    let f = fs::File::create(path).map_err(|e| StoreError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| StoreError::io(path, e))?;
    }
    w.flush().map_err(|e| StoreError::io(path, e))
}

/// Reads a record file, or every `*.jsonl` file under a directory in
/// path order.
pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, RunError> {
    let mut files = Vec::new();
    if path.is_dir() {
        let mut stack = vec![path.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).map_err(|e| StoreError::io(&d, e))? {
                let p = e.map_err(|e| StoreError::io(&d, e))?.path();
                if p.is_dir() {
                    stack.push(p);
                } else if p.extension().is_some_and(|x| x == "jsonl") {
                    files.push(p);
                }
            }
        }
        files.sort();
    } else if path.is_file() {
        files.push(path.to_path_buf());
    } else {
        return Err(MetricsError::Fixture(format!("{} does not exist", path.display())).into());
    }
    let mut out = Vec::new();
    for f in files {
        let reader = BufReader::new(fs::File::open(&f).map_err(|e| StoreError::io(&f, e))?);
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| StoreError::io(&f, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| StoreError::CorruptLine {
                path: f.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            out.push(rec);
        }
    }
    Ok(out)
}
