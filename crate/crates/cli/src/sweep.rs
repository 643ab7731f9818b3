//! Grid search over config keys.
//!
//! A grid file maps config keys to lists of values. Every combination is a
//! cell; cells are ranked by the median final objective over seeds, with
//! any failed run sending its cell to the back.

use std::path::Path;

use svrb::par;
use toml::Value;

use crate::config::{display_value, ExperimentConfig, FlatConfig};
use crate::experiment::{Experiment, RunOutcome};
use crate::output::{median, write_lines, write_outputs};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub axes: Vec<(String, Vec<Value>)>,
}

impl Grid {
    /// Each key holds a list of values (a scalar is a one-value list).
    pub fn from_flat(cfg: &FlatConfig) -> Result<Self, CliError> {
        let axes: Vec<(String, Vec<Value>)> = cfg
            .entries()
            .iter()
            .map(|(k, v)| match v {
                Value::Array(items) => (k.clone(), items.clone()),
                other => (k.clone(), vec![other.clone()]),
            })
            .collect();
        if axes.is_empty() {
            return Err(CliError::InvalidInput("grid has no keys".into()));
        }
        if let Some((k, _)) = axes.iter().find(|(_, v)| v.is_empty()) {
            return Err(CliError::InvalidInput(format!("grid key `{k}` has no values")));
        }
        Ok(Self { axes })
    }

    /// Cells in row-major order over the sorted keys.
    pub fn cells(&self) -> Vec<Vec<(String, Value)>> {
        let mut cells: Vec<Vec<(String, Value)>> = vec![Vec::new()];
        for (key, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|cell| {
                    values.iter().map(move |v| {
                        let mut next = cell.clone();
                        next.push((key.clone(), v.clone()));
                        next
                    })
                })
                .collect();
        }
        cells
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub assignment: Vec<(String, Value)>,
    pub runs: Vec<RunOutcome>,
    /// Median final objective; `None` if any run failed.
    pub score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    pub best: usize,
}

impl SweepResult {
    pub fn best_cell(&self) -> &CellResult {
        &self.cells[self.best]
    }
}

/// Index of the lowest score, failed cells last, ties to the earlier cell.
pub fn select_best(scores: &[Option<f64>]) -> Option<usize> {
    (0..scores.len()).min_by(|&a, &b| {
        let key = |i: usize| scores[i].filter(|v| v.is_finite()).unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then(a.cmp(&b))
    })
}

/// Runs every cell of `grid` on top of `base`. All cells are validated
/// before any run starts.
pub fn sweep(base: &FlatConfig, grid: &Grid) -> Result<SweepResult, CliError> {
    let assignments = grid.cells();
    let mut experiments = Vec::with_capacity(assignments.len());
    for (i, cell) in assignments.iter().enumerate() {
        let mut cfg = base.clone();
        for (k, v) in cell {
            cfg.set(k, v.clone());
        }
        let exp = ExperimentConfig::from_flat(&cfg).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("grid cell {i}: {m}")),
            other => other,
        })?;
        if exp.solvers.len() != 1 {
            return Err(CliError::Config("a sweep needs exactly one solver.algorithm".into()));
        }
        experiments.push(Experiment::build(exp)?);
    }
    let jobs: Vec<(usize, u64)> = experiments
        .iter()
        .enumerate()
        .flat_map(|(i, e)| e.config.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let outcomes = par::map(&jobs, |&(i, seed)| experiments[i].run(&experiments[i].config.solvers[0], seed));

    let mut cells: Vec<CellResult> = assignments
        .into_iter()
        .map(|assignment| CellResult {
            assignment,
            runs: Vec::new(),
            score: None,
        })
        .collect();
    for (&(i, _), run) in jobs.iter().zip(outcomes) {
        cells[i].runs.push(run);
    }
    for cell in &mut cells {
        let finals: Option<Vec<f64>> = cell.runs.iter().map(|r| r.final_objective()).collect();
        cell.score = finals.and_then(|f| median(&f));
    }
    let scores: Vec<Option<f64>> = cells.iter().map(|c| c.score).collect();
    let best = select_best(&scores).expect("grid has at least one cell");
    Ok(SweepResult { cells, best })
}

/// Writes `grid.csv` and one subdirectory of traces per cell.
pub fn write_sweep(dir: &Path, grid: &Grid, result: &SweepResult) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let keys: Vec<&str> = grid.axes.iter().map(|(k, _)| k.as_str()).collect();
    let mut lines = vec![format!("cell,{},status,median_final_objective,selected", keys.join(","))];
    for (i, cell) in result.cells.iter().enumerate() {
        let values: Vec<String> = cell.assignment.iter().map(|(_, v)| csv_field(&display_value(v))).collect();
        let status = if cell.score.is_some() { "ok" } else { "failed" };
        let score = cell.score.map_or_else(String::new, |s| s.to_string());
        lines.push(format!("{i},{},{status},{score},{}", values.join(","), u8::from(i == result.best)));
        write_outputs(&dir.join(format!("cell_{i:03}")), &cell.runs)?;
    }
    write_lines(&dir.join("grid.csv"), lines)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_are_the_cartesian_product() {
        let g = Grid::from_flat(&FlatConfig::parse("a = [1, 2]\nb = [\"x\", \"y\", \"z\"]\n").unwrap()).unwrap();
        let cells = g.cells();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[1], vec![("a".into(), Value::Integer(1)), ("b".into(), Value::String("y".into()))]);
    }

    #[test]
    fn empty_grids_are_invalid() {
        for text in ["", "a = []\n", "a = [1]\nb = []\n"] {
            let r = Grid::from_flat(&FlatConfig::parse(text).unwrap());
            assert!(matches!(r, Err(CliError::InvalidInput(_))), "{text:?}");
        }
    }

    #[test]
    fn failed_cells_rank_last() {
        assert_eq!(select_best(&[None, Some(2.0), Some(1.0)]), Some(2));
        assert_eq!(select_best(&[None, Some(f64::NAN), Some(5.0)]), Some(2));
        assert_eq!(select_best(&[Some(1.0), Some(1.0)]), Some(0));
        assert_eq!(select_best(&[None]), Some(0));
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn quoting() {
        assert_eq!(csv_field("[1, 2]"), "\"[1, 2]\"");
        assert_eq!(csv_field("0.5"), "0.5");
    }
}
