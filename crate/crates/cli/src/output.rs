//! CSV writers for traces and summaries.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::Algorithm;
use crate::experiment::RunOutcome;
use crate::CliError;

pub const TRACE_HEADER: &str = "step,samples,wall_ms,true_objective,grad_norm_sq,y_gap";
pub const SUMMARY_HEADER: &str = "solver,seed,status,steps,samples,final_objective,best_objective";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes `lines` (without trailing newlines) as an LF-terminated file.
pub fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        w.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn trace_file_name(algorithm: Algorithm, seed: u64) -> String {
    format!("{}_seed{seed}.csv", algorithm.name())
}

pub fn trace_lines(run: &RunOutcome) -> Vec<String> {
    let mut lines = vec![TRACE_HEADER.to_string()];
    lines.extend(run.trace.iter().map(|r| {
        format!(
            "{},{},{:.3},{},{},{}",
            r.step,
            r.samples,
            r.wall_ms,
            opt(r.true_objective),
            opt(r.grad_norm_sq),
            opt(r.y_gap)
        )
    }));
    lines
}

/// Median of the finite values; `None` if there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// One row per run, then one `all` row per solver with the median final
/// objective (blank if any run failed) and the best objective seen.
pub fn summary_lines(runs: &[RunOutcome]) -> Vec<String> {
    let mut lines = vec![SUMMARY_HEADER.to_string()];
    for r in runs {
        lines.push(format!(
            "{},{},{},{},{},{},{}",
            r.algorithm.name(),
            r.seed,
            r.status.label(),
            r.steps(),
            r.samples(),
            opt(r.final_objective()),
            opt(r.best_objective())
        ));
    }
    let mut algorithms: Vec<Algorithm> = runs.iter().map(|r| r.algorithm).collect();
    algorithms.dedup();
    for a in algorithms {
        let group: Vec<&RunOutcome> = runs.iter().filter(|r| r.algorithm == a).collect();
        let failed = group.iter().filter(|r| !r.status.is_ok()).count();
        let finals: Vec<f64> = group.iter().filter_map(|r| r.final_objective()).collect();
        let best = group.iter().filter_map(|r| r.best_objective()).min_by(f64::total_cmp);
        let status = if failed == 0 { "ok".to_string() } else { format!("failed:{failed}") };
        let med = if failed == 0 { median(&finals) } else { None };
        lines.push(format!("{},all,{},,,{},{}", a.name(), status, opt(med), opt(best)));
    }
    lines
}

/// Writes one trace CSV per run plus `summary.csv` into `dir`.
pub fn write_outputs(dir: &Path, runs: &[RunOutcome]) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::with_capacity(runs.len() + 1);
    for r in runs {
        let path = dir.join(trace_file_name(r.algorithm, r.seed));
        write_lines(&path, trace_lines(r))?;
        written.push(path);
    }
    let path = dir.join("summary.csv");
    write_lines(&path, summary_lines(runs))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::RunStatus;
    use svrb::solvers::TraceRow;

    fn row(step: u64, obj: f64) -> TraceRow {
        TraceRow {
            step,
            samples: step + 1,
            wall_ms: 0.5,
            true_objective: Some(obj),
            grad_norm_sq: None,
            y_gap: Some(0.25),
        }
    }

    #[test]
    fn trace_rows_format() {
        let run = RunOutcome {
            algorithm: Algorithm::Svrb,
            seed: 3,
            trace: vec![row(0, 1.5), row(5, 0.1)],
            status: RunStatus::Ok,
        };
        assert_eq!(trace_lines(&run), vec![TRACE_HEADER, "0,1,0.500,1.5,,0.25", "5,6,0.500,0.1,,0.25"]);
    }

    #[test]
    fn summary_marks_failures() {
        let ok = RunOutcome {
            algorithm: Algorithm::Ttsa,
            seed: 0,
            trace: vec![row(0, 2.0), row(10, 1.0)],
            status: RunStatus::Ok,
        };
        let bad = RunOutcome {
            seed: 1,
            status: RunStatus::Diverged { step: 4 },
            trace: vec![row(0, 2.0)],
            ..ok.clone()
        };
        let lines = summary_lines(&[ok, bad]);
        assert_eq!(lines[1], "ttsa,0,ok,10,11,1,1");
        assert_eq!(lines[2], "ttsa,1,diverged,0,1,,2");
        assert_eq!(lines[3], "ttsa,all,failed:1,,,,1");
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
