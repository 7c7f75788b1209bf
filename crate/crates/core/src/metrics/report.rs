//! Report assembly and CSV/JSON rendering.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_rational::Ratio;
use serde_json::{json, Value};

use super::fixtures::BiasAnnotation;
use super::{
    accuracy, base_final_delta, bias_index, consistency_curve, difficulty_of, fmt_pct, tier_table, to_signed,
    AccuracyTable, CurvePoint, DeltaTable, DifficultyTable, EvalRecord, FamilyMap, Grouping, Round, TierRow,
};
use crate::domain::DifficultyTier;
use crate::error::MetricsError;

/// Mean base-to-final drop reported alongside the published base/final
/// table, in percentage points.
pub const PUBLISHED_MEAN_DROP_PP: &str = "37.30";

pub const REPORT_FILES: [&str; 7] = [
    "accuracy_by_task.csv",
    "delta.csv",
    "bias_index.csv",
    "tier.csv",
    "difficulty.csv",
    "consistency.csv",
    "report.json",
];

#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    /// Per-item records with task labels.
    pub records: Vec<EvalRecord>,
    /// Records used for the base/final delta. Defaults to `records`.
    pub split_records: Option<Vec<EvalRecord>>,
    pub families: Option<FamilyMap>,
    pub bias_annotations: Vec<BiasAnnotation>,
    /// Used when no record carries a tier.
    pub tier_reference: Option<Vec<TierRow>>,
    pub rounds: Option<Vec<Round>>,
    pub reference_round: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiasRow {
    pub family: String,
    pub value: Ratio<i128>,
    pub highest_accuracy_model: String,
    pub published: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub accuracy_by_task: AccuracyTable,
    pub difficulty: DifficultyTable,
    pub delta: Option<DeltaTable>,
    pub bias: Vec<BiasRow>,
    pub tiers: Vec<TierRow>,
    pub consistency: Vec<CurvePoint>,
    pub footnotes: Vec<String>,
}

fn final_with_task(records: &[EvalRecord]) -> Vec<EvalRecord> {
    records.iter().filter(|r| r.in_final() && r.task.is_some()).cloned().collect()
}

fn split_table(records: &[EvalRecord], keep: fn(&EvalRecord) -> bool) -> Option<AccuracyTable> {
    let rs: Vec<EvalRecord> = records.iter().filter(|r| keep(r)).cloned().collect();
    accuracy(&rs, Grouping::ByGenerator).ok()
}

fn bias_rows(inputs: &ReportInputs, records: &[EvalRecord], notes: &mut Vec<String>) -> Vec<BiasRow> {
    let Some(fam) = &inputs.families else {
        notes.push("bias index omitted: no model family map given".into());
        return Vec::new();
    };
    let mut by_family: BTreeMap<String, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        by_family.entry(r.generator_family.clone()).or_default().push(r.clone());
    }
    let mut out = Vec::new();
    for (family, rs) in by_family {
        let table = accuracy(&rs, Grouping::Overall).expect("non-empty");
        let per = BTreeMap::from([(family.clone(), table.clone())]);
        match bias_index(&per, fam) {
            Ok(v) => {
                let best = table
                    .models
                    .iter()
                    .max_by_key(|m| table.pooled(m).expect("cells").accuracy())
                    .cloned()
                    .unwrap_or_default();
                let published = inputs
                    .bias_annotations
                    .iter()
                    .find(|a| a.family == family)
                    .map(|a| format!("{:.2}", a.value));
                out.push(BiasRow { family: family.clone(), value: v[&family], highest_accuracy_model: best, published });
            }
            Err(e) => notes.push(format!("bias index for {family} omitted: {e}")),
        }
    }
    if out.iter().any(|r| r.published.is_some()) {
        notes.push(
            "published bias values are listed for reference; the computed column is the same-family mean accuracy \
             minus the other-family mean, in percentage points"
                .into(),
        );
    }
    out
}

pub fn build_report(inputs: &ReportInputs) -> Result<Report, MetricsError> {
    let mut footnotes = Vec::new();
    let tasked = final_with_task(&inputs.records);
    let accuracy_by_task = accuracy(&tasked, Grouping::ByTask)?;
    let difficulty = difficulty_of(&accuracy_by_task);

    let split_src = inputs.split_records.as_deref().unwrap_or(&inputs.records);
    let delta = match (split_table(split_src, EvalRecord::in_base), split_table(split_src, EvalRecord::in_final)) {
        (Some(b), Some(f)) => {
            let d = base_final_delta(&b, &f)?;
            let mean = fmt_pct(d.mean);
            if mean != PUBLISHED_MEAN_DROP_PP {
                footnotes.push(format!(
                    "mean base-to-final drop over {} cells is {mean} pp; the published figure is {PUBLISHED_MEAN_DROP_PP} pp",
                    d.rows.len()
                ));
            }
            Some(d)
        }
        _ => {
            footnotes.push("base/final delta omitted: records do not cover both splits".into());
            None
        }
    };

    let bias = bias_rows(inputs, &tasked, &mut footnotes);

    let tiers = if inputs.records.iter().any(|r| r.tier.is_some()) {
        match tier_table(&inputs.records) {
            Ok(t) => t,
            Err(_) => {
                footnotes.push("tier table omitted: no lineage reached the impossible tier".into());
                Vec::new()
            }
        }
    } else if let Some(reference) = &inputs.tier_reference {
        footnotes.push("tier rows are taken from the reference tier table; records carry no tiers".into());
        reference.clone()
    } else {
        Vec::new()
    };
    for row in tiers.iter().filter(|r| !r.is_non_increasing()) {
        footnotes.push(format!("tier accuracy for {} is not monotone non-increasing", row.label));
    }

    let consistency = match &inputs.rounds {
        Some(rounds) => consistency_curve(rounds, inputs.reference_round)?,
        None => Vec::new(),
    };

    Ok(Report { accuracy_by_task, difficulty, delta, bias, tiers, consistency, footnotes })
}

fn csv_string(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

fn strings<const N: usize>(xs: [&str; N]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Report {
    /// `model,T1..T7,avg` with two-decimal percentages; avg pools all tasks.
    pub fn accuracy_csv(&self) -> String {
        let t = &self.accuracy_by_task;
        let mut header = vec!["model".to_string()];
        header.extend(t.groups.iter().cloned());
        header.push("avg".into());
        let rows: Vec<Vec<String>> = t
            .models
            .iter()
            .map(|m| {
                let mut row = vec![m.clone()];
                row.extend(
                    t.groups
                        .iter()
                        .map(|g| t.cell(m, g).map_or(String::new(), |c| fmt_pct(to_signed(c.accuracy())))),
                );
                row.push(fmt_pct(to_signed(t.pooled(m).expect("model has cells").accuracy())));
                row
            })
            .collect();
        csv_string(&header, &rows)
    }

    pub fn difficulty_csv(&self) -> String {
        let d = &self.difficulty;
        let rows: Vec<Vec<String>> = d
            .models
            .iter()
            .flat_map(|m| {
                d.groups.iter().filter_map(move |g| {
                    d.cells.get(&(m.clone(), g.clone())).map(|v| vec![m.clone(), g.clone(), fmt_pct(to_signed(*v))])
                })
            })
            .collect();
        csv_string(&strings(["model", "task", "difficulty"]), &rows)
    }

    pub fn delta_csv(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .delta
            .iter()
            .flat_map(|d| &d.rows)
            .map(|r| {
                vec![
                    r.model.clone(),
                    r.group.clone(),
                    fmt_pct(to_signed(r.base)),
                    fmt_pct(to_signed(r.final_)),
                    fmt_pct(r.delta),
                ]
            })
            .collect();
        csv_string(&strings(["model", "generator", "base", "final", "delta"]), &rows)
    }

    pub fn bias_csv(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .bias
            .iter()
            .map(|b| {
                vec![
                    b.family.clone(),
                    fmt_pct(b.value),
                    b.highest_accuracy_model.clone(),
                    b.published.clone().unwrap_or_default(),
                ]
            })
            .collect();
        csv_string(&strings(["family", "bias_index", "highest_accuracy_model", "published"]), &rows)
    }

    pub fn tier_csv(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .tiers
            .iter()
            .map(|r| {
                let mut row = vec![r.label.clone()];
                row.extend(DifficultyTier::ALL.iter().map(|tier| {
                    r.cells.iter().find(|(t, _)| t == tier).map_or(String::new(), |(_, v)| fmt_pct(to_signed(*v)))
                }));
                row.push(r.is_non_increasing().to_string());
                row
            })
            .collect();
        csv_string(&strings(["generator", "easy", "hard", "extreme", "impossible", "monotone"]), &rows)
    }

    pub fn consistency_csv(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .consistency
            .iter()
            .map(|p| {
                vec![p.samples.to_string(), format!("{:.4}", p.mean), format!("{:.4}", p.mean_gap), format!("{:.4}", p.band)]
            })
            .collect();
        csv_string(&strings(["samples", "mean", "mean_gap", "band"]), &rows)
    }

    pub fn to_json(&self) -> Value {
        let t = &self.accuracy_by_task;
        let accuracy: Vec<Value> = t
            .iter()
            .map(|(m, g, c)| json!({"model": m, "task": g, "correct": c.correct, "n": c.n, "unparsable": c.unparsable_n, "accuracy": fmt_pct(to_signed(c.accuracy()))}))
            .collect();
        let delta = self.delta.as_ref().map(|d| {
            json!({
                "mean": fmt_pct(d.mean),
                "rows": d.rows.iter().map(|r| json!({"model": r.model, "generator": r.group, "base": fmt_pct(to_signed(r.base)), "final": fmt_pct(to_signed(r.final_)), "delta": fmt_pct(r.delta)})).collect::<Vec<_>>(),
            })
        });
        json!({
            "accuracy_by_task": accuracy,
            "delta": delta,
            "bias_index": self.bias.iter().map(|b| json!({"family": b.family, "value": fmt_pct(b.value), "highest_accuracy_model": b.highest_accuracy_model, "published": b.published})).collect::<Vec<_>>(),
            "tiers": self.tiers.iter().map(|r| json!({"generator": r.label, "cells": r.cells.iter().map(|(t, v)| json!({"tier": t, "accuracy": fmt_pct(to_signed(*v))})).collect::<Vec<_>>(), "monotone": r.is_non_increasing()})).collect::<Vec<_>>(),
            "consistency": self.consistency,
            "footnotes": self.footnotes,
        })
    }

    /// Writes every report file into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let files = [
            self.accuracy_csv(),
            self.delta_csv(),
            self.bias_csv(),
            self.tier_csv(),
            self.difficulty_csv(),
            self.consistency_csv(),
            serde_json::to_string_pretty(&self.to_json()).expect("json") + "\n",
        ];
        for (name, body) in REPORT_FILES.iter().zip(files) {
            fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}
