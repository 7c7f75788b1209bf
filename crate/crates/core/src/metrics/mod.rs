//! Evaluation records and the analyses built on them: accuracy tables,
//! difficulty, base/final deltas, the bias index, tier tables and
//! consistency curves.
//!
//! Accuracies are exact ratios of counts; rounding happens only when a
//! report is rendered.

pub mod fixtures;
pub mod report;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::agent::{solve, AgentHandle, Role};
use crate::domain::{AnswerKey, DifficultyTier, TaskTypeId};
use crate::error::MetricsError;
use crate::store::{BenchmarkSet, StoredItem};
use crate::taskspec::{grade, Verdict};

/// Which set a record was evaluated as part of. `All` records belong to
/// the base set when their tier is Easy and to the final set when the item
/// is final.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Base,
    Final,
    All,
}

/// One graded solve attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model: String,
    pub item_id: String,
    pub lineage_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskTypeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<DifficultyTier>,
    pub generator: String,
    pub generator_family: String,
    #[serde(rename = "final")]
    pub is_final: bool,
    pub split: Split,
    pub verdict: Verdict,
    pub raw_answer: Option<AnswerKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn in_base(&self) -> bool {
        match self.split {
            Split::Base => true,
            Split::Final => false,
            Split::All => self.tier == Some(DifficultyTier::Easy),
        }
    }

    pub fn in_final(&self) -> bool {
        match self.split {
            Split::Base => false,
            Split::Final => true,
            Split::All => self.is_final,
        }
    }
}

fn record_for(model: &AgentHandle, s: &StoredItem, split: Split) -> EvalRecord {
    let (verdict, raw_answer, error) = match solve(model, &s.item.instance) {
        Ok(ans) => (grade(&s.item.instance, &ans), ans.answer, None),
        Err(e) => (Verdict::Unparsable, None, Some(e.to_string())),
    };
    EvalRecord {
        model: model.name.clone(),
        item_id: s.item.instance.instance_id.clone(),
        lineage_id: s.item.lineage_id.clone(),
        task: Some(s.item.task()),
        tier: Some(s.item.tier()),
        generator: s.generator_tag.clone(),
        generator_family: s.generator_family.clone(),
        is_final: s.item.is_final,
        split,
        verdict,
        raw_answer,
        error,
    }
}

/// One solve call per item, run on `concurrency` threads. Records come back
/// in item order. Gateway failures that survive the client's retries are
/// recorded as unparsable with the error attached.
pub fn evaluate_model(
    model: &AgentHandle,
    set: &BenchmarkSet,
    split: Split,
    concurrency: usize,
) -> Result<Vec<EvalRecord>, MetricsError> {
    if model.role != Role::Student {
        return Err(MetricsError::Fixture(format!("model '{}' must be bound to the student role", model.name)));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| MetricsError::Fixture(e.to_string()))?;
    Ok(pool.install(|| {
        use rayon::prelude::*;
        set.items.par_iter().map(|s| record_for(model, s, split)).collect()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    ByTask,
    ByTier,
    Overall,
    ByGenerator,
}

pub const OVERALL: &str = "overall";
const UNKNOWN: &str = "unknown";

impl Grouping {
    fn label(self, r: &EvalRecord) -> String {
        match self {
            Grouping::ByTask => r.task.map_or(UNKNOWN.to_string(), |t| t.to_string()),
            Grouping::ByTier => r.tier.map_or(UNKNOWN.to_string(), |t| t.to_string()),
            Grouping::Overall => OVERALL.to_string(),
            Grouping::ByGenerator => r.generator.clone(),
        }
    }
}

/// Counts behind one accuracy cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub correct: u64,
    pub n: u64,
    pub unparsable_n: u64,
}

impl Cell {
    /// A cell whose accuracy is exactly `r`.
    pub fn from_ratio(r: Ratio<u64>) -> Self {
        Self { correct: *r.numer(), n: *r.denom(), unparsable_n: 0 }
    }

    pub fn accuracy(&self) -> Ratio<u64> {
        Ratio::new(self.correct, self.n)
    }

    pub fn difficulty(&self) -> Ratio<u64> {
        Ratio::new(self.n - self.correct, self.n)
    }

    fn add(&mut self, other: &Cell) {
        self.correct += other.correct;
        self.n += other.n;
        self.unparsable_n += other.unparsable_n;
    }
}

/// Accuracy cells keyed by (model, group). Models keep first-seen order;
/// groups are in canonical order (task, tier, or first-seen generator).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub grouping: Grouping,
    pub models: Vec<String>,
    pub groups: Vec<String>,
    pub cells: BTreeMap<(String, String), Cell>,
}

fn group_rank(grouping: Grouping, label: &str) -> usize {
    match grouping {
        Grouping::ByTask => label.parse::<TaskTypeId>().map_or(usize::MAX, |t| t.ordinal()),
        Grouping::ByTier => label
            .parse::<DifficultyTier>()
            .ok()
            .and_then(|t| DifficultyTier::ALL.iter().position(|x| *x == t))
            .unwrap_or(usize::MAX),
        Grouping::Overall | Grouping::ByGenerator => 0,
    }
}

fn push_unique(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_string());
    }
}

impl AccuracyTable {
    fn empty(grouping: Grouping) -> Self {
        Self { grouping, models: Vec::new(), groups: Vec::new(), cells: BTreeMap::new() }
    }

    fn insert(&mut self, model: &str, group: &str, cell: Cell) {
        push_unique(&mut self.models, model);
        push_unique(&mut self.groups, group);
        self.cells.entry((model.to_string(), group.to_string())).or_default().add(&cell);
    }

    fn sort_groups(&mut self) {
        let g = self.grouping;
        // Stable sort keeps first-seen order among equal ranks.
        self.groups.sort_by_key(|l| group_rank(g, l));
    }

    /// Builds a table from exact accuracies, one cell per entry.
    pub fn from_accuracies<'a>(
        grouping: Grouping,
        entries: impl IntoIterator<Item = (&'a str, &'a str, Ratio<u64>)>,
    ) -> Self {
        let mut t = Self::empty(grouping);
        for (model, group, r) in entries {
            t.insert(model, group, Cell::from_ratio(r));
        }
        t.sort_groups();
        t
    }

    pub fn cell(&self, model: &str, group: &str) -> Option<&Cell> {
        self.cells.get(&(model.to_string(), group.to_string()))
    }

    /// All of a model's cells pooled into one.
    pub fn pooled(&self, model: &str) -> Option<Cell> {
        let mut out = Cell::default();
        let mut any = false;
        for ((m, _), c) in &self.cells {
            if m == model {
                out.add(c);
                any = true;
            }
        }
        any.then_some(out)
    }

    /// Cells in (model order, group order).
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &Cell)> {
        self.models.iter().flat_map(move |m| {
            self.groups
                .iter()
                .filter_map(move |g| self.cell(m, g).map(|c| (m.as_str(), g.as_str(), c)))
        })
    }
}

/// Exact accuracy per (model, group). Unparsable verdicts count as incorrect
/// and are also tallied in `unparsable_n`.
pub fn accuracy(records: &[EvalRecord], grouping: Grouping) -> Result<AccuracyTable, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    let mut t = AccuracyTable::empty(grouping);
    for r in records {
        let cell = Cell {
            correct: u64::from(r.verdict == Verdict::Correct),
            n: 1,
            unparsable_n: u64::from(r.verdict == Verdict::Unparsable),
        };
        t.insert(&r.model, &grouping.label(r), cell);
    }
    t.sort_groups();
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyTable {
    pub grouping: Grouping,
    pub models: Vec<String>,
    pub groups: Vec<String>,
    pub cells: BTreeMap<(String, String), Ratio<u64>>,
}

/// Difficulty of each cell: the fraction of items the model got wrong.
pub fn difficulty_of(table: &AccuracyTable) -> DifficultyTable {
    DifficultyTable {
        grouping: table.grouping,
        models: table.models.clone(),
        groups: table.groups.clone(),
        cells: table.cells.iter().map(|(k, c)| (k.clone(), c.difficulty())).collect(),
    }
}

pub fn to_signed(r: Ratio<u64>) -> Ratio<i128> {
    Ratio::new(i128::from(*r.numer()), i128::from(*r.denom()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub model: String,
    pub group: String,
    pub base: Ratio<u64>,
    #[serde(rename = "final")]
    pub final_: Ratio<u64>,
    pub delta: Ratio<i128>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub rows: Vec<DeltaRow>,
    /// Unweighted mean of the row deltas.
    pub mean: Ratio<i128>,
}

/// Base minus final accuracy for every (model, group). Both tables must
/// cover exactly the same keys.
pub fn base_final_delta(base: &AccuracyTable, fin: &AccuracyTable) -> Result<DeltaTable, MetricsError> {
    let bk: BTreeSet<_> = base.cells.keys().collect();
    let fk: BTreeSet<_> = fin.cells.keys().collect();
    if let Some((m, g)) = bk.symmetric_difference(&fk).next() {
        return Err(MetricsError::KeyMismatch(format!("({m}, {g}) is present in only one table")));
    }
    if bk.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    let rows: Vec<DeltaRow> = base
        .iter()
        .map(|(m, g, b)| {
            let f = fin.cell(m, g).expect("keys checked");
            DeltaRow {
                model: m.to_string(),
                group: g.to_string(),
                base: b.accuracy(),
                final_: f.accuracy(),
                delta: to_signed(b.accuracy()) - to_signed(f.accuracy()),
            }
        })
        .collect();
    let sum = rows.iter().fold(Ratio::from_integer(0), |acc, r| acc + r.delta);
    let mean = sum / Ratio::from_integer(rows.len() as i128);
    Ok(DeltaTable { rows, mean })
}

/// Model name to family.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyMap(pub BTreeMap<String, String>);

impl FamilyMap {
    pub fn family_of(&self, model: &str) -> Option<&str> {
        self.0.get(model).map(String::as_str)
    }

    pub fn insert(&mut self, model: impl Into<String>, family: impl Into<String>) {
        self.0.insert(model.into(), family.into());
    }
}

fn mean_ratio(v: &[Ratio<i128>]) -> Ratio<i128> {
    v.iter().fold(Ratio::from_integer(0), |a, b| a + b) / Ratio::from_integer(v.len() as i128)
}

/// For each generator family G (keys of `per_generator`): mean accuracy on
/// G's benchmark of models in family G, minus the mean of every other
/// evaluated model. A model's accuracy pools all of its cells in the table.
pub fn bias_index(
    per_generator: &BTreeMap<String, AccuracyTable>,
    fam: &FamilyMap,
) -> Result<BTreeMap<String, Ratio<i128>>, MetricsError> {
    let mut out = BTreeMap::new();
    for (family, table) in per_generator {
        let mut same = Vec::new();
        let mut diff = Vec::new();
        for model in &table.models {
            let f = fam
                .family_of(model)
                .ok_or_else(|| MetricsError::KeyMismatch(format!("model '{model}' has no family")))?;
            let acc = to_signed(table.pooled(model).expect("model has cells").accuracy());
            if f == family {
                same.push(acc);
            } else {
                diff.push(acc);
            }
        }
        if same.is_empty() || diff.is_empty() {
            return Err(MetricsError::EmptyFamily(family.clone()));
        }
        out.insert(family.clone(), mean_ratio(&same) - mean_ratio(&diff));
    }
    Ok(out)
}

/// Mean accuracy across models at each tier for one generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierRow {
    pub label: String,
    pub cells: Vec<(DifficultyTier, Ratio<u64>)>,
}

impl TierRow {
    /// True when accuracy never rises from one tier to the next.
    pub fn is_non_increasing(&self) -> bool {
        self.cells.windows(2).all(|w| w[1].1 <= w[0].1)
    }
}

/// Tier table over lineages that reached the impossible tier, one row per
/// generator family. Each cell averages per-model accuracies.
pub fn tier_table(records: &[EvalRecord]) -> Result<Vec<TierRow>, MetricsError> {
    let full: HashSet<(&str, &str)> = records
        .iter()
        .filter(|r| r.tier == Some(DifficultyTier::Impossible))
        .map(|r| (r.generator.as_str(), r.lineage_id.as_str()))
        .collect();
    let kept: Vec<&EvalRecord> = records
        .iter()
        .filter(|r| r.tier.is_some() && full.contains(&(r.generator.as_str(), r.lineage_id.as_str())))
        .collect();
    if kept.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    let mut families: Vec<&str> = Vec::new();
    let mut cells: BTreeMap<(&str, DifficultyTier, &str), Cell> = BTreeMap::new();
    for r in kept {
        if !families.contains(&r.generator_family.as_str()) {
            families.push(&r.generator_family);
        }
        let c = cells.entry((&r.generator_family, r.tier.expect("filtered"), &r.model)).or_default();
        c.n += 1;
        c.correct += u64::from(r.verdict == Verdict::Correct);
    }
    Ok(families
        .into_iter()
        .map(|fam| {
            let row = DifficultyTier::ALL
                .into_iter()
                .filter_map(|tier| {
                    let accs: Vec<Ratio<u64>> = cells
                        .iter()
                        .filter(|((f, t, _), _)| *f == fam && *t == tier)
                        .map(|(_, c)| c.accuracy())
                        .collect();
                    (!accs.is_empty()).then(|| {
                        let sum = accs.iter().fold(Ratio::from_integer(0), |a, b| a + b);
                        (tier, sum / Ratio::from_integer(accs.len() as u64))
                    })
                })
                .collect();
            TierRow { label: fam.to_string(), cells: row }
        })
        .collect())
}

/// Per-task accuracies after one generation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub samples: u32,
    pub accuracy: BTreeMap<TaskTypeId, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub samples: u32,
    /// Mean accuracy across tasks.
    pub mean: f64,
    /// Mean of per-task deviations from the reference round.
    pub mean_gap: f64,
    /// Population standard deviation of those deviations.
    pub band: f64,
}

pub fn consistency_curve(rounds: &[Round], reference: usize) -> Result<Vec<CurvePoint>, MetricsError> {
    let reference = rounds.get(reference).ok_or(MetricsError::MissingReference(reference))?;
    let tasks: Vec<TaskTypeId> = reference.accuracy.keys().copied().collect();
    if tasks.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    let k = tasks.len() as f64;
    rounds
        .iter()
        .map(|round| {
            if !round.accuracy.keys().copied().eq(tasks.iter().copied()) {
                return Err(MetricsError::MismatchedTaskSets);
            }
            let dev: Vec<f64> = tasks.iter().map(|t| round.accuracy[t] - reference.accuracy[t]).collect();
            let mean = round.accuracy.values().sum::<f64>() / k;
            let mean_gap = dev.iter().sum::<f64>() / k;
            let var = dev.iter().map(|d| (d - mean_gap).powi(2)).sum::<f64>() / k;
            Ok(CurvePoint { samples: round.samples, mean, mean_gap, band: var.sqrt() })
        })
        .collect()
}

pub fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub fn signed_to_f64(r: Ratio<i128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// `r` as a percentage rounded half away from zero to two decimals.
pub fn fmt_pct(r: Ratio<i128>) -> String {
    let hundredths = (r * Ratio::from_integer(10_000)).round().to_integer();
    let sign = if hundredths < 0 { "-" } else { "" };
    let a = hundredths.abs();
    format!("{sign}{}.{:02}", a / 100, a % 100)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(model: &str, task: TaskTypeId, verdict: Verdict) -> EvalRecord {
        EvalRecord {
            model: model.into(),
            item_id: "i".into(),
            lineage_id: "l".into(),
            task: Some(task),
            tier: Some(DifficultyTier::Easy),
            generator: "g".into(),
            generator_family: "G".into(),
            is_final: true,
            split: Split::Final,
            verdict,
            raw_answer: None,
            error: None,
        }
    }

    #[test]
    fn mixed_verdicts() {
        use Verdict::*;
        let rs: Vec<_> = [Correct, Correct, Correct, Incorrect, Unparsable]
            .into_iter()
            .map(|v| rec("m", TaskTypeId::T1, v))
            .collect();
        let t = accuracy(&rs, Grouping::Overall).unwrap();
        let c = t.cell("m", OVERALL).unwrap();
        assert_eq!(c.accuracy(), Ratio::new(3, 5));
        assert_eq!(c.unparsable_n, 1);
        assert_eq!(c.accuracy() + c.difficulty(), Ratio::from_integer(1));
    }

    #[test]
    fn empty_records() {
        assert!(matches!(accuracy(&[], Grouping::ByTask), Err(MetricsError::EmptyGroup)));
    }

    #[test]
    fn groups_follow_task_order() {
        let rs = vec![
            rec("m", TaskTypeId::T7, Verdict::Correct),
            rec("m", TaskTypeId::T2, Verdict::Correct),
            rec("m", TaskTypeId::T5, Verdict::Correct),
        ];
        assert_eq!(accuracy(&rs, Grouping::ByTask).unwrap().groups, vec!["T2", "T5", "T7"]);
    }

    #[test]
    fn delta_of_identical_tables_is_zero() {
        let t = AccuracyTable::from_accuracies(Grouping::ByGenerator, [("m", "g", Ratio::new(2, 3))]);
        let d = base_final_delta(&t, &t).unwrap();
        assert_eq!(d.mean, Ratio::from_integer(0));
    }

    #[test]
    fn delta_key_mismatch() {
        let a = AccuracyTable::from_accuracies(Grouping::ByGenerator, [("m", "g", Ratio::new(2, 3))]);
        let b = AccuracyTable::from_accuracies(Grouping::ByGenerator, [("m", "h", Ratio::new(2, 3))]);
        assert!(matches!(base_final_delta(&a, &b), Err(MetricsError::KeyMismatch(_))));
    }

    #[test]
    fn pct_formatting() {
        assert_eq!(fmt_pct(Ratio::new(2186, 10_000)), "21.86");
        assert_eq!(fmt_pct(Ratio::new(-1, 8)), "-12.50");
        assert_eq!(fmt_pct(Ratio::new(1517, 2800)), "54.18");
        assert_eq!(fmt_pct(Ratio::new(1, 20_000)), "0.01");
    }

    #[test]
    fn bias_requires_both_sides() {
        let t = AccuracyTable::from_accuracies(Grouping::Overall, [("a", OVERALL, Ratio::new(1, 2))]);
        let mut fam = FamilyMap::default();
        fam.insert("a", "X");
        let per = BTreeMap::from([("X".to_string(), t)]);
        assert!(matches!(bias_index(&per, &fam), Err(MetricsError::EmptyFamily(f)) if f == "X"));
    }

    #[test]
    fn tier_table_keeps_full_lineages_only() {
        let mk = |lineage: &str, tier, v| EvalRecord {
            lineage_id: lineage.into(),
            tier: Some(tier),
            ..rec("m", TaskTypeId::T1, v)
        };
        let rs = vec![
            mk("full", DifficultyTier::Easy, Verdict::Correct),
            mk("full", DifficultyTier::Impossible, Verdict::Incorrect),
            mk("short", DifficultyTier::Easy, Verdict::Incorrect),
        ];
        let rows = tier_table(&rs).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(
            rows[0].cells,
            vec![(DifficultyTier::Easy, Ratio::from_integer(1)), (DifficultyTier::Impossible, Ratio::from_integer(0))]
        );
        assert!(rows[0].is_non_increasing());
    }

    #[test]
    fn consistency_errors() {
        let r = |s, pairs: &[(TaskTypeId, f64)]| Round { samples: s, accuracy: pairs.iter().copied().collect() };
        let rounds = vec![r(50, &[(TaskTypeId::T1, 0.5)]), r(100, &[(TaskTypeId::T2, 0.5)])];
        assert!(matches!(consistency_curve(&rounds, 1), Err(MetricsError::MismatchedTaskSets)));
        assert!(matches!(consistency_curve(&rounds, 5), Err(MetricsError::MissingReference(5))));
    }
}
