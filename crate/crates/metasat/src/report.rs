//! Aggregates per-seed result CSVs into comparison tables shaped like the
//! evaluation grid: rows original/budgets, columns the evaluated models,
//! one mean ± std cell per (row, column) over seeds.

use indexmap::IndexMap;
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::exp::{ResultRow, COLUMN_ORDER};

/// One aggregated table for a (stats, supervision) combination.
#[derive(Debug)]
pub struct ReportTable {
    pub stats: String,
    pub supervision: String,
    pub columns: Vec<String>,
    pub budgets: Vec<usize>,
    pub seeds: usize,
    /// (budget, column) -> adapted FER samples over seeds.
    pub cells: BTreeMap<(usize, String), Vec<f64>>,
    /// column -> unadapted `original` FER samples over seeds.
    pub originals: IndexMap<String, Vec<f64>>,
}

#[derive(Debug)]
pub struct Report {
    pub tables: Vec<ReportTable>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn canonical_columns(present: &BTreeSet<String>) -> Vec<String> {
    let mut out: Vec<String> = COLUMN_ORDER
        .iter()
        .map(|c| c.id().to_string())
        .filter(|id| present.contains(id))
        .collect();
    for extra in present {
        if !out.contains(extra) {
            out.push(extra.clone());
        }
    }
    out
}

/// Aggregates rows from one or more runs. Exact duplicate rows collapse;
/// two rows filling the same plan cell with different numbers, or seeds
/// covering different cell sets, are inconsistent inputs.
pub fn aggregate(rows: &[ResultRow]) -> Result<Report> {
    // drop exact duplicates (e.g. the same file aggregated twice)
    let mut seen = BTreeSet::new();
    let mut unique: Vec<&ResultRow> = Vec::new();
    for row in rows {
        if seen.insert(row.to_csv_line()) {
            unique.push(row);
        }
    }
    // conflicting duplicates share a cell key with different values
    let mut by_key: BTreeMap<(String, usize, String, String, u64), &ResultRow> = BTreeMap::new();
    for row in &unique {
        if let Some(prev) = by_key.insert(row.cell_key(), row) {
            return Err(Error::Data(format!(
                "inconsistent plan cells: two different rows for column {} budget {} stats {} supervision {} seed {} ({} vs {})",
                prev.column, prev.budget_frames, prev.stats, prev.supervision, prev.seed,
                prev.adapted_fer, row.adapted_fer
            )));
        }
    }
    // every seed must cover the same cell set
    let mut per_seed: BTreeMap<u64, BTreeSet<(String, usize, String, String)>> = BTreeMap::new();
    for row in &unique {
        per_seed.entry(row.seed).or_default().insert((
            row.column.clone(),
            row.budget_frames,
            row.stats.clone(),
            row.supervision.clone(),
        ));
    }
    let mut cell_sets = per_seed.values();
    if let Some(first) = cell_sets.next() {
        for set in cell_sets {
            if set != first {
                return Err(Error::Data(
                    "inconsistent plan cells: input files cover different cell sets per seed"
                        .into(),
                ));
            }
        }
    }

    // group adapted rows into (stats, supervision) tables
    let mut combos: BTreeSet<(String, String)> = BTreeSet::new();
    for row in &unique {
        if row.budget_frames > 0 {
            combos.insert((row.stats.clone(), row.supervision.clone()));
        }
    }
    let n_seeds = per_seed.len();
    let mut tables = Vec::new();
    for (stats, supervision) in combos {
        let mut present: BTreeSet<String> = BTreeSet::new();
        let mut budgets: BTreeSet<usize> = BTreeSet::new();
        let mut cells: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
        let mut originals: IndexMap<String, Vec<f64>> = IndexMap::new();
        for row in &unique {
            if row.budget_frames > 0 && row.stats == stats && row.supervision == supervision {
                present.insert(row.column.clone());
                budgets.insert(row.budget_frames);
                cells
                    .entry((row.budget_frames, row.column.clone()))
                    .or_default()
                    .push(row.adapted_fer);
            }
        }
        for row in &unique {
            if row.budget_frames == 0 && present.contains(&row.column) {
                originals
                    .entry(row.column.clone())
                    .or_default()
                    .push(row.unadapted_fer);
            }
        }
        tables.push(ReportTable {
            stats,
            supervision,
            columns: canonical_columns(&present),
            budgets: budgets.into_iter().collect(),
            seeds: n_seeds,
            cells,
            originals,
        });
    }
    Ok(Report { tables })
}

fn budget_row_label(budget: usize) -> String {
    // assumes the default 100 frames/s mapping for seconds labels
    if budget % 100 == 0 {
        format!("{}s", budget / 100)
    } else {
        format!("{budget}f")
    }
}

fn format_cell(values: &[f64]) -> String {
    let (mean, std) = mean_std(values);
    format!("{:.2} ± {:.2}", mean * 100.0, std * 100.0)
}

impl ReportTable {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "stats={} supervision={} (adapted FER %, mean ± std over {} seed{})\n",
            self.stats,
            self.supervision,
            self.seeds,
            if self.seeds == 1 { "" } else { "s" }
        ));
        let width = 16;
        let mut header = format!("{:<10}", "data");
        for col in &self.columns {
            header.push_str(&format!("{col:>width$}"));
        }
        out.push_str(&header);
        out.push('\n');
        let mut original_line = format!("{:<10}", "original");
        for col in &self.columns {
            let cell = self
                .originals
                .get(col)
                .map(|v| format_cell(v))
                .unwrap_or_else(|| "-".to_string());
            original_line.push_str(&format!("{cell:>width$}"));
        }
        out.push_str(&original_line);
        out.push('\n');
        for &budget in &self.budgets {
            let mut line = format!("{:<10}", budget_row_label(budget));
            for col in &self.columns {
                let cell = self
                    .cells
                    .get(&(budget, col.clone()))
                    .map(|v| format_cell(v))
                    .unwrap_or_else(|| "-".to_string());
                line.push_str(&format!("{cell:>width$}"));
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

impl Report {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, table) in self.tables.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&table.render());
        }
        out
    }

    /// Mean adapted FER of one cell, if present (averaged over seeds).
    pub fn mean_adapted(
        &self,
        stats: &str,
        supervision: &str,
        column: &str,
        budget: usize,
    ) -> Option<f64> {
        self.tables
            .iter()
            .find(|t| t.stats == stats && t.supervision == supervision)?
            .cells
            .get(&(budget, column.to_string()))
            .map(|v| mean_std(v).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(column: &str, budget: usize, seed: u64, adapted: f64) -> ResultRow {
        ResultRow {
            column: column.into(),
            budget_frames: budget,
            stats: if budget == 0 { "global".into() } else { "global".into() },
            supervision: if budget == 0 { "none".into() } else { "supervised".into() },
            seed,
            episodes: 5,
            unadapted_fer: 0.3,
            adapted_fer: adapted,
            mean_improvement: 0.3 - adapted,
            frac_improved: 1.0,
        }
    }

    #[test]
    fn single_seed_table_echoes_raw_rows() {
        let rows = vec![
            row("baseline-lhuc", 0, 1, 0.3),
            row("baseline-lhuc", 1000, 1, 0.25),
        ];
        let report = aggregate(&rows).unwrap();
        assert_eq!(report.tables.len(), 1);
        let rendered = report.render();
        assert!(rendered.contains("10s"), "{rendered}");
        assert!(rendered.contains("25.00 ± 0.00"), "{rendered}");
        assert!(rendered.contains("30.00 ± 0.00"), "{rendered}");
    }

    #[test]
    fn aggregating_a_file_with_itself_changes_nothing() {
        let rows = vec![
            row("baseline-lhuc", 0, 1, 0.3),
            row("baseline-lhuc", 1000, 1, 0.25),
        ];
        let mut doubled = rows.clone();
        doubled.extend(rows.clone());
        let once = aggregate(&rows).unwrap().render();
        let twice = aggregate(&doubled).unwrap().render();
        assert_eq!(once, twice);
    }

    #[test]
    fn conflicting_duplicate_cells_are_an_error() {
        let rows = vec![
            row("baseline-lhuc", 1000, 1, 0.25),
            row("baseline-lhuc", 1000, 1, 0.26),
        ];
        let err = aggregate(&rows).unwrap_err();
        assert!(err.to_string().contains("inconsistent plan cells"), "{err}");
    }

    #[test]
    fn seeds_with_different_cell_sets_are_an_error() {
        let rows = vec![
            row("baseline-lhuc", 1000, 1, 0.25),
            row("baseline-all", 1000, 2, 0.24),
        ];
        let err = aggregate(&rows).unwrap_err();
        assert!(err.to_string().contains("different cell sets"), "{err}");
    }

    #[test]
    fn multi_seed_cells_report_mean_and_std() {
        let rows = vec![
            row("baseline-lhuc", 1000, 1, 0.2),
            row("baseline-lhuc", 1000, 2, 0.3),
        ];
        let report = aggregate(&rows).unwrap();
        let mean = report
            .mean_adapted("global", "supervised", "baseline-lhuc", 1000)
            .unwrap();
        assert!((mean - 0.25).abs() < 1e-12);
        let rendered = report.render();
        // std of {0.2, 0.3} is ~0.0707 -> 7.07 in percent
        assert!(rendered.contains("25.00 ± 7.07"), "{rendered}");
    }

    #[test]
    fn columns_render_in_table_order() {
        let rows = vec![
            row("maml-all", 1000, 1, 0.2),
            row("baseline-all", 1000, 1, 0.22),
            row("sat-lhuc", 1000, 1, 0.21),
        ];
        let report = aggregate(&rows).unwrap();
        let cols = &report.tables[0].columns;
        assert_eq!(cols, &["baseline-all", "sat-lhuc", "maml-all"]);
    }
}
