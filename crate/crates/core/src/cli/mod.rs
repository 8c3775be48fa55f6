//! Config ingestion, experiment orchestration and report files.
//!
//! Output layout in the run directory:
//! - `summary.csv`: one row per solve point, columns [`SUMMARY_COLUMNS`]
//! - `checks.csv`: `check,params,metric,threshold,pass`
//! - `summary.json`: normalized config, rows, checks, failures
//! - per run: `<id>_u.csv`, `<id>_stages.csv` and, for extremal runs,
//!   `<id>_v_delta.csv`, `<id>_extremal.json`, `<id>_simplicity.csv`

mod config;
mod run;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::{
    load_config, parse_config, ExperimentConfig, ExtremalSpec, OperatorSpec, ProblemSpec, SweepAxes, Task, SCHEMA,
};
pub use run::{run_experiment, verify_report, Artifact, Outcome, SummaryRow, SUMMARY_COLUMNS};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// `summary.csv` and `checks.csv`.
    Csv,
    /// `summary.json`.
    SummaryDocument,
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, &target)?;
    Ok(target)
}

/// `summary.csv` body; header only when there are no rows.
pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    run::csv_string(w)
}

fn checks_csv(outcome: &Outcome) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["check", "params", "metric", "threshold", "pass"])?;
    for c in &outcome.checks {
        w.serialize(c)?;
    }
    run::csv_string(w)
}

/// Writes the report files of one format into `dir`.
pub fn emit_report(outcome: &Outcome, cfg: &ExperimentConfig, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    match format {
        ReportFormat::Csv => Ok(vec![
            write_atomic(dir, "summary.csv", summary_csv(&outcome.rows)?.as_bytes())?,
            write_atomic(dir, "checks.csv", checks_csv(outcome)?.as_bytes())?,
        ]),
        ReportFormat::SummaryDocument => {
            let mut doc = serde_json::json!({
                "schema": SCHEMA,
                "task": outcome.task,
                "config": cfg,
                "all_green": outcome.all_green(),
                "rows": outcome.rows,
                "checks": outcome.checks,
                "failures": outcome.failures,
            });
            if let Some(t) = outcome.elapsed_seconds {
                doc["elapsed_seconds"] = t.into();
            }
            let text = serde_json::to_string_pretty(&doc)?;
            Ok(vec![write_atomic(dir, "summary.json", text.as_bytes())?])
        }
    }
}

/// Writes both report formats and every artifact.
pub fn emit_all(outcome: &Outcome, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = emit_report(outcome, cfg, dir, ReportFormat::Csv)?;
    paths.extend(emit_report(outcome, cfg, dir, ReportFormat::SummaryDocument)?);
    for a in &outcome.artifacts {
        paths.push(write_atomic(dir, &a.name, a.contents.as_bytes())?);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(task: &str, extra: &str) -> String {
        format!(
            r#"{{
            "schema": "mixlap/v1",
            "grid": {{"shape": {{"kind": "interval"}}, "bounds": [[0, 1]], "nodes_per_axis": 41, "collar": 1}},
            "operator": {{"p": 2, "s": 0.5}},
            "problem": {{"delta": 0.5, "source": {{"kind": "constant", "value": 1}}}},
            "extremal": {{"samples": 50, "starts": 2}},
            "deterministic": true,
            "task": "{task}"{extra}
        }}"#
        )
    }

    #[test]
    fn empty_summary_is_header_only() {
        let text = summary_csv(&[]).unwrap();
        assert_eq!(text.trim_end(), SUMMARY_COLUMNS.join(","));
    }

    #[test]
    fn solve_writes_files() {
        let cfg = parse_config(&doc("solve", "")).unwrap();
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.exit_code(), 0, "{:?}", out.checks);
        assert_eq!(out.rows.len(), 1);
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_all(&out, &cfg, dir.path()).unwrap();
        for name in ["summary.csv", "checks.csv", "summary.json", "run000_u.csv", "run000_stages.csv"] {
            assert!(paths.iter().any(|p| p.ends_with(name)), "{name} missing");
        }
        assert!(fs::read_dir(dir.path())
            .unwrap()
            .all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 2);
    }

    #[test]
    fn extremal_row_is_finite() {
        let cfg = parse_config(&doc("extremal", "")).unwrap();
        let out = run_experiment(&cfg).unwrap();
        assert!(out.all_green(), "{:?}", out.checks);
        let r = &out.rows[0];
        for v in [r.mixed_norm_p, r.sup_norm, r.residual, r.mu_formula.unwrap(), r.mu_infimum.unwrap(), r.min_margin.unwrap()] {
            assert!(v.is_finite());
        }
        assert!(out.artifacts.iter().any(|a| a.name == "run000_v_delta.csv"));
    }

    #[test]
    fn corrupted_report_fails_verification() {
        let cfg = parse_config(&doc("verify", "")).unwrap();
        let grid = crate::grid::Grid::new(cfg.grid.clone()).unwrap();
        let op = cfg.operator.build(1).unwrap();
        let f = crate::grid::GridFunction::from_fn(&grid, |_| 1.0).unwrap();
        let prob = crate::solver::SingularProblem::new(0.5, f, op).unwrap();
        let mut report = crate::solver::solve_singular(&prob, &cfg.solver).unwrap();
        assert_eq!(verify_report(&cfg, &report).unwrap().exit_code(), 0);
        let k = report.per_n.len();
        report.per_n.swap(0, k - 1);
        assert_ne!(verify_report(&cfg, &report).unwrap().exit_code(), 0);
    }

    #[test]
    fn solve_failure_is_recorded() {
        let mut cfg = parse_config(&doc("solve", "")).unwrap();
        cfg.problem.source = crate::solver::SourceSpec::Nodal { path: "missing.csv".into() };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.failures.len(), 1);
        assert_ne!(out.exit_code(), 0);
        assert!(!out.rows[0].checks_passed);
    }
}
