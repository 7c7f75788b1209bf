//! Loaders for published accuracy tables kept as CSV fixtures, and their
//! expansion into per-item evaluation records.
//!
//! Fixture files may begin with `#` comment lines. A comment of the form
//! `# key=value key=value` carries table metadata.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_rational::Ratio;

use super::{EvalRecord, FamilyMap, Split, TierRow};
use crate::domain::{DifficultyTier, TaskTypeId};
use crate::error::MetricsError;
use crate::taskspec::Verdict;

/// Fixture directory shipped with this crate.
pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata").join("fixtures")
}

fn err(path: &Path, msg: impl std::fmt::Display) -> MetricsError {
    MetricsError::Fixture(format!("{}: {msg}", path.display()))
}

struct Parsed {
    meta: BTreeMap<String, String>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Parsed, MetricsError> {
    let text = fs::read_to_string(path).map_err(|e| err(path, e))?;
    let mut meta = BTreeMap::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        for tok in line.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = tok.split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            }
        }
    }
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| err(path, e))?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(|s| s.trim().to_string()).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| err(path, e))?;
    Ok(Parsed { meta, header, rows })
}

/// Parses a percentage with at most two decimals into an exact fraction.
pub fn parse_pct(s: &str) -> Result<Ratio<u64>, MetricsError> {
    let bad = || MetricsError::Fixture(format!("bad percentage '{s}'"));
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if frac.len() > 2 || int.is_empty() {
        return Err(bad());
    }
    let int: u64 = int.parse().map_err(|_| bad())?;
    let frac: u64 = if frac.is_empty() { 0 } else { format!("{frac:0<2}").parse().map_err(|_| bad())? };
    Ok(Ratio::new(int * 100 + frac, 10_000))
}

fn meta_u64(p: &Parsed, path: &Path, key: &str) -> Result<u64, MetricsError> {
    p.meta
        .get(key)
        .ok_or_else(|| err(path, format!("missing '{key}' metadata")))?
        .parse()
        .map_err(|e| err(path, e))
}

/// Per-task accuracy table for one generator's benchmark.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskTable {
    pub generator: String,
    pub family: String,
    pub split: Split,
    pub n: u64,
    pub tasks: Vec<TaskTypeId>,
    pub rows: Vec<TaskRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRow {
    pub model: String,
    pub cells: Vec<Ratio<u64>>,
    /// The printed average, rounded to two decimals.
    pub avg: Ratio<u64>,
}

pub fn load_task_table(path: &Path) -> Result<TaskTable, MetricsError> {
    let p = read_table(path)?;
    let get = |k: &str| p.meta.get(k).cloned().ok_or_else(|| err(path, format!("missing '{k}' metadata")));
    let split = match get("split")?.as_str() {
        "base" => Split::Base,
        "final" => Split::Final,
        other => return Err(err(path, format!("unknown split '{other}'"))),
    };
    let (tasks, rows) = parse_task_rows(&p, path)?;
    Ok(TaskTable { generator: get("generator")?, family: get("family")?, split, n: meta_u64(&p, path, "n")?, tasks, rows })
}

fn parse_task_rows(p: &Parsed, path: &Path) -> Result<(Vec<TaskTypeId>, Vec<TaskRow>), MetricsError> {
    if p.header.first().map(String::as_str) != Some("model") || p.header.last().map(String::as_str) != Some("avg") {
        return Err(err(path, "header must be model,<tasks>,avg"));
    }
    let tasks = p.header[1..p.header.len() - 1]
        .iter()
        .map(|h| h.parse::<TaskTypeId>().map_err(|e| err(path, e)))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = p
        .rows
        .iter()
        .map(|r| {
            if r.len() != tasks.len() + 2 {
                return Err(err(path, format!("row for '{}' has {} fields", r[0], r.len())));
            }
            Ok(TaskRow {
                model: r[0].clone(),
                cells: r[1..=tasks.len()].iter().map(|s| parse_pct(s)).collect::<Result<_, _>>()?,
                avg: parse_pct(&r[tasks.len() + 1])?,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok((tasks, rows))
}

fn synth_records<'a>(
    model: &str,
    generator: &'a str,
    family: &str,
    split: Split,
    task: Option<TaskTypeId>,
    correct: u64,
    n: u64,
) -> impl Iterator<Item = EvalRecord> + 'a {
    let family = family.to_string();
    let tag = task.map_or("all".to_string(), |t| t.to_string());
    let split_tag = match split {
        Split::Base => "base",
        Split::Final => "final",
        Split::All => "all",
    };
    let model = model.to_string();
    (0..n).map(move |i| EvalRecord {
        model: model.clone(),
        item_id: format!("{generator}/{split_tag}/{tag}/{i:04}"),
        lineage_id: format!("{generator}/{tag}/{i:04}"),
        task,
        tier: None,
        generator: generator.to_string(),
        generator_family: family.clone(),
        is_final: split != Split::Base,
        split,
        verdict: if i < correct { Verdict::Correct } else { Verdict::Incorrect },
        raw_answer: None,
        error: None,
    })
}

fn exact_count(pct: Ratio<u64>, n: u64) -> Option<u64> {
    let c = pct * Ratio::from_integer(n);
    c.is_integer().then(|| c.to_integer())
}

/// Per-item records reproducing every cell of the table exactly.
pub fn expand_task_table(t: &TaskTable) -> Result<Vec<EvalRecord>, MetricsError> {
    let mut out = Vec::new();
    for row in &t.rows {
        for (task, pct) in t.tasks.iter().zip(&row.cells) {
            let c = exact_count(*pct, t.n).ok_or_else(|| {
                MetricsError::Fixture(format!("{} {} {task}: {pct} is not a count over n={}", t.generator, row.model, t.n))
            })?;
            out.extend(synth_records(&row.model, &t.generator, &t.family, t.split, Some(*task), c, t.n));
        }
    }
    Ok(out)
}

/// All `table5_*.csv` tables in `dir`, in file-name order.
pub fn load_generator_tables(dir: &Path) -> Result<Vec<TaskTable>, MetricsError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("table5_") && n.ends_with(".csv"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| load_task_table(p)).collect()
}

/// Expected cross-generator averages: one row per model.
pub fn load_expected_by_task(path: &Path) -> Result<(Vec<TaskTypeId>, Vec<TaskRow>), MetricsError> {
    let p = read_table(path)?;
    parse_task_rows(&p, path)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseFinalRow {
    pub model: String,
    pub generator: String,
    pub base: Ratio<u64>,
    pub final_: Ratio<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseFinalTable {
    pub n: u64,
    pub rows: Vec<BaseFinalRow>,
}

pub fn load_base_final(path: &Path) -> Result<BaseFinalTable, MetricsError> {
    let p = read_table(path)?;
    let n = meta_u64(&p, path, "n")?;
    let rows = p
        .rows
        .iter()
        .map(|r| match r.as_slice() {
            [model, generator, base, fin] => Ok(BaseFinalRow {
                model: model.clone(),
                generator: generator.clone(),
                base: parse_pct(base)?,
                final_: parse_pct(fin)?,
            }),
            _ => Err(err(path, "expected model,generator,base,final")),
        })
        .collect::<Result<_, _>>()?;
    Ok(BaseFinalTable { n, rows })
}

/// The printed values are rounded to two decimals, so each cell maps to the
/// nearest count over `n`. Cells whose nearest count is more than 0.005
/// points away are rejected.
fn nearest_count(pct: Ratio<u64>, n: u64) -> Option<u64> {
    let c = (pct * Ratio::from_integer(n)).round().to_integer();
    let back = Ratio::new(c, n);
    let gap = if back > pct { back - pct } else { pct - back };
    (gap <= Ratio::new(1, 20_000)).then_some(c)
}

/// Base and final records for every row. Records carry no task.
pub fn expand_base_final(t: &BaseFinalTable, families: &BTreeMap<String, String>) -> Result<Vec<EvalRecord>, MetricsError> {
    let mut out = Vec::new();
    for row in &t.rows {
        let family = families.get(&row.generator).map_or("unknown", String::as_str);
        for (split, pct) in [(Split::Base, row.base), (Split::Final, row.final_)] {
            let c = nearest_count(pct, t.n).ok_or_else(|| {
                MetricsError::Fixture(format!("{} on {}: {pct} has no count over n={}", row.model, row.generator, t.n))
            })?;
            out.extend(synth_records(&row.model, &row.generator, family, split, None, c, t.n));
        }
    }
    Ok(out)
}

pub fn load_families(path: &Path) -> Result<FamilyMap, MetricsError> {
    let p = read_table(path)?;
    let mut map = FamilyMap::default();
    for r in &p.rows {
        match r.as_slice() {
            [model, family] => map.insert(model.clone(), family.clone()),
            _ => return Err(err(path, "expected model,family")),
        }
    }
    Ok(map)
}

pub fn load_tier_rows(path: &Path) -> Result<Vec<TierRow>, MetricsError> {
    let p = read_table(path)?;
    let tiers = p.header[1..]
        .iter()
        .map(|h| h.parse::<DifficultyTier>().map_err(|e| err(path, e)))
        .collect::<Result<Vec<_>, _>>()?;
    p.rows
        .iter()
        .map(|r| {
            Ok(TierRow {
                label: r[0].clone(),
                cells: tiers.iter().copied().zip(r[1..].iter().map(|s| parse_pct(s))).map(|(t, v)| v.map(|v| (t, v))).collect::<Result<_, _>>()?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasAnnotation {
    pub family: String,
    pub value: f64,
    pub highest_accuracy_model: String,
}

pub fn load_bias_annotations(path: &Path) -> Result<Vec<BiasAnnotation>, MetricsError> {
    let p = read_table(path)?;
    p.rows
        .iter()
        .map(|r| match r.as_slice() {
            [family, value, model] => Ok(BiasAnnotation {
                family: family.clone(),
                value: value.parse().map_err(|e| err(path, e))?,
                highest_accuracy_model: model.clone(),
            }),
            _ => Err(err(path, "expected family,bias_index,highest_accuracy_model")),
        })
        .collect()
}

/// Rounds as `samples,T1,...` with per-task accuracies in percent.
pub fn load_rounds(path: &Path) -> Result<Vec<super::Round>, MetricsError> {
    let p = read_table(path)?;
    let tasks = p.header[1..]
        .iter()
        .map(|h| h.parse::<TaskTypeId>().map_err(|e| err(path, e)))
        .collect::<Result<Vec<_>, _>>()?;
    p.rows
        .iter()
        .map(|r| {
            let samples = r[0].parse().map_err(|e| err(path, e))?;
            let accuracy = tasks
                .iter()
                .zip(&r[1..])
                .filter(|(_, v)| !v.trim().is_empty())
                .map(|(t, v)| v.trim().parse::<f64>().map(|v| (*t, v)).map_err(|e| err(path, e)))
                .collect::<Result<_, _>>()?;
            Ok(super::Round { samples, accuracy })
        })
        .collect()
}

/// Loads every fixture table present in `dir` into report inputs.
pub fn report_inputs(dir: &Path) -> Result<super::report::ReportInputs, MetricsError> {
    let tables = load_generator_tables(dir)?;
    let gen_families: BTreeMap<String, String> =
        tables.iter().map(|t| (t.generator.clone(), t.family.clone())).collect();
    let mut inputs = super::report::ReportInputs::default();
    for t in &tables {
        inputs.records.extend(expand_task_table(t)?);
    }
    let opt = |name: &str| Some(dir.join(name)).filter(|p| p.is_file());
    if let Some(p) = opt("table2_base_final.csv") {
        inputs.split_records = Some(expand_base_final(&load_base_final(&p)?, &gen_families)?);
    }
    if let Some(p) = opt("families.csv") {
        inputs.families = Some(load_families(&p)?);
    }
    if let Some(p) = opt("table6_bias_annotations.csv") {
        inputs.bias_annotations = load_bias_annotations(&p)?;
    }
    if let Some(p) = opt("table8_tiers.csv") {
        inputs.tier_reference = Some(load_tier_rows(&p)?);
    }
    Ok(inputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pct_parsing() {
        assert_eq!(parse_pct("67.71").unwrap(), Ratio::new(6771, 10_000));
        assert_eq!(parse_pct("5").unwrap(), Ratio::new(5, 100));
        assert_eq!(parse_pct("0.5").unwrap(), Ratio::new(50, 10_000));
        assert!(parse_pct("1.234").is_err());
        assert!(parse_pct("x").is_err());
    }

    #[test]
    fn generator_tables_load() {
        let tables = load_generator_tables(&fixture_dir()).unwrap();
        assert_eq!(tables.len(), 4);
        for t in &tables {
            assert_eq!(t.n, 100);
            assert_eq!(t.rows.len(), 12);
            assert_eq!(expand_task_table(t).unwrap().len(), 12 * 7 * 100);
        }
    }

    #[test]
    fn base_final_counts_are_integral() {
        let t = load_base_final(&fixture_dir().join("table2_base_final.csv")).unwrap();
        assert_eq!(t.rows.len(), 48);
        assert_eq!(expand_base_final(&t, &BTreeMap::new()).unwrap().len(), 48 * 2 * 700);
    }

    #[test]
    fn nearest_count_tolerance() {
        assert_eq!(nearest_count(parse_pct("67.71").unwrap(), 700), Some(474));
        assert_eq!(nearest_count(parse_pct("67.50").unwrap(), 700), None);
    }
}
