//! Line-delimited JSON storage for trajectories and benchmark items.
//!
//! Layout: `<root>/<generator-tag>/<task>.jsonl` plus `manifest.json` in each
//! generator directory. Every line is self-describing through `record_type`
//! and `schema_version`.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{BenchmarkItem, DifficultyTier, TaskTypeId, Trajectory};
use crate::error::StoreError;
use crate::taskspec::validate_structure;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record_type", rename_all = "snake_case")]
pub enum StoreRecord {
    BenchmarkItem { schema_version: u32, item: Box<BenchmarkItem> },
    Trajectory { schema_version: u32, trajectory: Box<Trajectory> },
}

/// Stable identifier of a stored item.
pub type ItemId = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentIdentities {
    pub teacher: String,
    pub orchestrator: String,
    pub student: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub generator_tag: String,
    pub generator_family: String,
    pub seed: u64,
    /// SHA-256 of the canonical JSON of the run configuration.
    pub config_hash: String,
    pub agents: AgentIdentities,
    pub resources_version: String,
    /// Milliseconds since the Unix epoch. The only wall-clock value in a store.
    pub created_at_unix_ms: u64,
}

/// Hex SHA-256 of `value` serialized as JSON.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn read_manifest(dir: &Path) -> Result<Option<Manifest>, StoreError> {
    let path = dir.join(MANIFEST_FILE);
    match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| StoreError::CorruptLine { path, line: 1, message: e.to_string() }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(StoreError::io(path, e)),
    }
}

fn check_item(item: &BenchmarkItem) -> Result<(), StoreError> {
    let bad = |m: String| Err(StoreError::InvalidItem(format!("{}: {m}", item.instance.instance_id)));
    if item.instance.instance_id.is_empty() {
        return bad("empty instance id".into());
    }
    if item.lineage_id != item.instance.lineage_id {
        return bad(format!("lineage {} does not match instance lineage {}", item.lineage_id, item.instance.lineage_id));
    }
    if !item.validation.approved {
        return bad("validation not approved".into());
    }
    let v = validate_structure(&item.instance);
    if !v.is_empty() {
        return bad(v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "));
    }
    Ok(())
}

/// Single-writer store for one generator.
pub struct BenchmarkStore {
    dir: PathBuf,
    files: BTreeMap<TaskTypeId, File>,
    ids: HashSet<ItemId>,
}

impl BenchmarkStore {
    /// Creates `<root>/<generator_tag>` and truncates any task files in it,
    /// so a rerun rewrites the store from scratch.
    pub fn create(root: &Path, generator_tag: &str) -> Result<Self, StoreError> {
        let dir = root.join(generator_tag);
        fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
        for entry in fs::read_dir(&dir).map_err(|e| StoreError::io(&dir, e))? {
            let path = entry.map_err(|e| StoreError::io(&dir, e))?.path();
            if path.extension().is_some_and(|x| x == "jsonl") {
                fs::remove_file(&path).map_err(|e| StoreError::io(&path, e))?;
            }
        }
        Ok(Self { dir, files: BTreeMap::new(), ids: HashSet::new() })
    }

    /// Opens an existing generator directory for further appends.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
        let existing = load_dir(dir, &Filter::default(), LoadMode::Strict)?;
        let ids = existing.set.items.iter().map(|s| s.item.instance.instance_id.clone()).collect();
        Ok(Self { dir: dir.to_path_buf(), files: BTreeMap::new(), ids })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn task_path(&self, task: TaskTypeId) -> PathBuf {
        self.dir.join(format!("{task}.jsonl"))
    }

    fn write_line(&mut self, task: TaskTypeId, record: &StoreRecord) -> Result<(), StoreError> {
        let path = self.task_path(task);
        if let std::collections::btree_map::Entry::Vacant(e) = self.files.entry(task) {
            let f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| StoreError::io(&path, e))?;
            e.insert(f);
        }
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        let f = self.files.get_mut(&task).expect("inserted above");
        f.write_all(line.as_bytes()).map_err(|e| StoreError::io(&path, e))
    }

    pub fn append_item(&mut self, item: &BenchmarkItem) -> Result<ItemId, StoreError> {
        check_item(item)?;
        let id = item.instance.instance_id.clone();
        if self.ids.contains(&id) {
            return Err(StoreError::DuplicateInstanceId(id));
        }
        self.write_line(
            item.task(),
            &StoreRecord::BenchmarkItem { schema_version: SCHEMA_VERSION, item: Box::new(item.clone()) },
        )?;
        self.ids.insert(id.clone());
        Ok(id)
    }

    /// Writes the trajectory record followed by one item per retained stage.
    pub fn append_trajectory(&mut self, t: &Trajectory) -> Result<Vec<ItemId>, StoreError> {
        let items = t.items();
        for item in &items {
            check_item(item)?;
            if self.ids.contains(&item.instance.instance_id) {
                return Err(StoreError::DuplicateInstanceId(item.instance.instance_id.clone()));
            }
        }
        self.write_line(
            t.task,
            &StoreRecord::Trajectory { schema_version: SCHEMA_VERSION, trajectory: Box::new(t.clone()) },
        )?;
        items.iter().map(|i| self.append_item(i)).collect()
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<(), StoreError> {
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| StoreError::io(&path, e))
    }

    pub fn sync(&mut self) -> Result<(), StoreError> {
        for (task, f) in &self.files {
            f.sync_all().map_err(|e| StoreError::io(self.dir.join(format!("{task}.jsonl")), e))?;
        }
        Ok(())
    }
}

/// Which items to load. Unset fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Filter {
    pub tasks: Option<Vec<TaskTypeId>>,
    pub tiers: Option<Vec<DifficultyTier>>,
    pub final_only: bool,
    pub generator: Option<String>,
}

impl Filter {
    fn accepts(&self, s: &StoredItem) -> bool {
        self.tasks.as_ref().is_none_or(|t| t.contains(&s.item.task()))
            && self.tiers.as_ref().is_none_or(|t| t.contains(&s.item.tier()))
            && (!self.final_only || s.item.is_final)
            && self.generator.as_ref().is_none_or(|g| *g == s.generator_tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// The first corrupt line fails the load.
    Strict,
    /// Corrupt lines are reported and skipped.
    Lenient,
}

/// An item with the generator that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredItem {
    pub generator_tag: String,
    pub generator_family: String,
    pub item: BenchmarkItem,
}

impl StoredItem {
    fn sort_key(&self) -> (&str, TaskTypeId, &str, DifficultyTier, &str) {
        (
            &self.generator_tag,
            self.item.task(),
            &self.item.lineage_id,
            self.item.tier(),
            &self.item.instance.instance_id,
        )
    }
}

/// Items sorted by (generator, task, lineage, tier, instance id).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BenchmarkSet {
    pub items: Vec<StoredItem>,
}

impl BenchmarkSet {
    pub fn new(mut items: Vec<StoredItem>) -> Self {
        items.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct LoadedBenchmark {
    pub set: BenchmarkSet,
    pub trajectories: Vec<Trajectory>,
    /// Lines skipped in lenient mode.
    pub corrupt: Vec<StoreError>,
}

fn generator_of(dir: &Path) -> Result<(String, String), StoreError> {
    Ok(match read_manifest(dir)? {
        Some(m) => (m.generator_tag, m.generator_family),
        None => {
            let tag = dir.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            (tag, "unknown".to_string())
        }
    })
}

fn load_file(
    path: &Path,
    generator: &(String, String),
    filter: &Filter,
    mode: LoadMode,
    out: &mut LoadedBenchmark,
    seen: &mut HashSet<(String, String)>,
) -> Result<(), StoreError> {
    let f = File::open(path).map_err(|e| StoreError::io(path, e))?;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| StoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| StoreError::CorruptLine { path: path.to_path_buf(), line: i + 1, message };
        let record = serde_json::from_str::<StoreRecord>(&line).map_err(|e| corrupt(e.to_string())).and_then(|r| {
            let version = match &r {
                StoreRecord::BenchmarkItem { schema_version, .. } | StoreRecord::Trajectory { schema_version, .. } => {
                    *schema_version
                }
            };
            if version == SCHEMA_VERSION {
                Ok(r)
            } else {
                Err(corrupt(format!("unsupported schema_version {version}")))
            }
        });
        let record = match (record, mode) {
            (Ok(r), _) => r,
            (Err(e), LoadMode::Strict) => return Err(e),
            (Err(e), LoadMode::Lenient) => {
                out.corrupt.push(e);
                continue;
            }
        };
        match record {
            StoreRecord::Trajectory { trajectory, .. } => out.trajectories.push(*trajectory),
            StoreRecord::BenchmarkItem { item, .. } => {
                let key = (generator.0.clone(), item.instance.instance_id.clone());
                if !seen.insert(key) {
                    let e = StoreError::DuplicateInstanceId(item.instance.instance_id.clone());
                    match mode {
                        LoadMode::Strict => return Err(e),
                        LoadMode::Lenient => {
                            out.corrupt.push(e);
                            continue;
                        }
                    }
                }
                let stored =
                    StoredItem { generator_tag: generator.0.clone(), generator_family: generator.1.clone(), item: *item };
                if filter.accepts(&stored) {
                    out.set.items.push(stored);
                }
            }
        }
    }
    Ok(())
}

fn jsonl_files(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| StoreError::io(&d, e))? {
            let path = entry.map_err(|e| StoreError::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|x| x == "jsonl") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn load_dir(path: &Path, filter: &Filter, mode: LoadMode) -> Result<LoadedBenchmark, StoreError> {
    let mut out = LoadedBenchmark::default();
    let mut seen = HashSet::new();
    let files = if path.is_dir() { jsonl_files(path)? } else { vec![path.to_path_buf()] };
    for file in files {
        let generator = generator_of(file.parent().unwrap_or(Path::new(".")))?;
        load_file(&file, &generator, filter, mode, &mut out, &mut seen)?;
    }
    out.set = BenchmarkSet::new(std::mem::take(&mut out.set.items));
    out.trajectories.sort_by(|a, b| (a.task, &a.lineage_id).cmp(&(b.task, &b.lineage_id)));
    Ok(out)
}

/// Loads items from a single file or every `.jsonl` under a directory.
/// Generator identity comes from the `manifest.json` next to each file.
pub fn load_benchmark(path: &Path, filter: &Filter, mode: LoadMode) -> Result<LoadedBenchmark, StoreError> {
    if !path.exists() {
        return Err(StoreError::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    load_dir(path, filter, mode)
}

/// Splits a set into per-lineage base (Easy) and final items, in matching order.
pub fn export_base_and_final(set: &BenchmarkSet) -> Result<(BenchmarkSet, BenchmarkSet), StoreError> {
    let mut lineages: BTreeMap<(&str, &str), (Option<&StoredItem>, Option<&StoredItem>)> = BTreeMap::new();
    for s in &set.items {
        let slot = lineages.entry((&s.generator_tag, &s.item.lineage_id)).or_default();
        if s.item.tier() == DifficultyTier::Easy {
            slot.0 = Some(s);
        }
        if s.item.is_final {
            slot.1 = Some(s);
        }
    }
    let mut base = Vec::with_capacity(lineages.len());
    let mut fin = Vec::with_capacity(lineages.len());
    for ((_, lineage), (b, f)) in lineages {
        base.push(b.ok_or_else(|| StoreError::MissingBaseStage(lineage.to_string()))?.clone());
        fin.push(f.ok_or_else(|| StoreError::MissingFinal(lineage.to_string()))?.clone());
    }
    Ok((BenchmarkSet::new(base), BenchmarkSet::new(fin)))
}
