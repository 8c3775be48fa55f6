//! Task orchestration: one or more solve points, the checks each task asks
//! for, and the in-memory artifacts later written by [`super::emit_report`].

use std::sync::Arc;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, OperatorSpec, Task};
use crate::energy::OperatorParams;
use crate::error::Result;
use crate::extremal::{
    check_euler_lagrange_extremal, extremal_from_report, stream_rng, verify_simplicity, verify_sobolev,
};
use crate::grid::{DomainSpec, Grid, GridFunction};
use crate::solver::{solve_singular, solve_singular_from, SingularProblem, SolveReport};
use crate::verify::{check_comparison, check_equivalence_modes, report_rows, VerificationRow};

/// One line of `summary.csv`. Column order is part of the output format.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub delta: f64,
    pub p: f64,
    pub s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub nodes: usize,
    pub n_final: u64,
    pub iterations: usize,
    pub mixed_norm_p: f64,
    pub sup_norm: f64,
    pub residual: f64,
    pub mu_formula: Option<f64>,
    pub mu_infimum: Option<f64>,
    pub min_margin: Option<f64>,
    pub checks_passed: bool,
}

pub const SUMMARY_COLUMNS: [&str; 16] = [
    "run_id",
    "delta",
    "p",
    "s",
    "alpha",
    "beta",
    "nodes",
    "n_final",
    "iterations",
    "mixed_norm_p",
    "sup_norm",
    "residual",
    "mu_formula",
    "mu_infimum",
    "min_margin",
    "checks_passed",
];

/// A named file body produced by a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub task: Task,
    pub rows: Vec<SummaryRow>,
    pub checks: Vec<VerificationRow>,
    pub artifacts: Vec<Artifact>,
    /// Errors that ended a run early.
    pub failures: Vec<String>,
    /// Wall time, left out in deterministic mode.
    pub elapsed_seconds: Option<f64>,
}

impl Outcome {
    pub fn all_green(&self) -> bool {
        self.failures.is_empty() && self.checks.iter().all(|c| c.pass) && self.rows.iter().all(|r| r.checks_passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_green() {
            0
        } else {
            1
        }
    }
}

/// One parameter combination.
#[derive(Debug, Clone)]
struct Point {
    id: String,
    delta: f64,
    operator: OperatorSpec,
    grid: DomainSpec,
    seed: u64,
}

/// Independent seed for point `index`, split from the config seed.
fn point_seed(seed: u64, index: usize) -> u64 {
    stream_rng(seed, (1 << 40) + index as u64).next_u64()
}

fn points(cfg: &ExperimentConfig) -> Vec<Point> {
    let axis = |v: &Vec<f64>, base: f64| if v.is_empty() { vec![base] } else { v.clone() };
    let (deltas, ps, ss, nodes) = if cfg.task == Task::Sweep {
        let nodes = if cfg.sweep.nodes.is_empty() {
            vec![cfg.grid.nodes_per_axis]
        } else {
            cfg.sweep.nodes.clone()
        };
        (
            axis(&cfg.sweep.delta, cfg.problem.delta),
            axis(&cfg.sweep.p, cfg.operator.p),
            axis(&cfg.sweep.s, cfg.operator.s),
            nodes,
        )
    } else {
        (
            vec![cfg.problem.delta],
            vec![cfg.operator.p],
            vec![cfg.operator.s],
            vec![cfg.grid.nodes_per_axis],
        )
    };
    let mut out = Vec::new();
    for &delta in &deltas {
        for &p in &ps {
            for &s in &ss {
                for &n in &nodes {
                    let index = out.len();
                    out.push(Point {
                        id: format!("run{index:03}"),
                        delta,
                        operator: OperatorSpec { p, s, ..cfg.operator },
                        grid: DomainSpec {
                            nodes_per_axis: n,
                            ..cfg.grid.clone()
                        },
                        seed: point_seed(cfg.seed, index),
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Default)]
struct PointResult {
    row: Option<SummaryRow>,
    checks: Vec<VerificationRow>,
    artifacts: Vec<Artifact>,
    failure: Option<String>,
}

fn stages_csv(report: &SolveReport) -> Result<String> {
    #[derive(Serialize)]
    struct StageRow {
        n: u64,
        picard_iterations: usize,
        newton_iterations: usize,
        residual: f64,
        mixed_norm_p: f64,
        sup_norm: f64,
        compact_min: f64,
        cross_check: Option<f64>,
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &report.per_n {
        w.serialize(StageRow {
            n: s.n,
            picard_iterations: s.picard_iterations,
            newton_iterations: s.newton_iterations,
            residual: s.residual,
            mixed_norm_p: s.mixed_norm_p,
            sup_norm: s.sup_norm,
            compact_min: s.compact_min,
            cross_check: s.cross_check,
        })?;
    }
    csv_string(w)
}

pub(crate) fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

struct Prepared {
    prob: SingularProblem,
    op: OperatorParams,
}

fn prepare(cfg: &ExperimentConfig, point: &Point) -> Result<Prepared> {
    let grid: Arc<Grid> = Grid::new(point.grid.clone())?;
    let op = point.operator.build(grid.dim())?;
    let f = cfg.problem.source.sample(&grid, cfg.base_dir())?;
    Ok(Prepared {
        prob: SingularProblem::new(point.delta, f, op)?,
        op,
    })
}

fn run_point(cfg: &ExperimentConfig, point: &Point) -> PointResult {
    let mut out = PointResult::default();
    if let Err(e) = run_point_inner(cfg, point, &mut out) {
        out.failure = Some(format!("{}: {e}", point.id));
    }
    if out.row.is_none() {
        out.row = Some(SummaryRow {
            run_id: point.id.clone(),
            delta: point.delta,
            p: point.operator.p,
            s: point.operator.s,
            alpha: point.operator.alpha,
            beta: point.operator.beta,
            nodes: point.grid.nodes_per_axis,
            n_final: 0,
            iterations: 0,
            mixed_norm_p: f64::NAN,
            sup_norm: f64::NAN,
            residual: f64::NAN,
            mu_formula: None,
            mu_infimum: None,
            min_margin: None,
            checks_passed: false,
        });
    }
    out
}

fn run_point_inner(cfg: &ExperimentConfig, point: &Point, out: &mut PointResult) -> Result<()> {
    let Prepared { prob, op } = prepare(cfg, point)?;
    let scfg = &cfg.solver;
    let report = solve_singular(&prob, scfg)?;
    let id = &point.id;
    let last = report.per_n.last();
    let mut row = SummaryRow {
        run_id: id.clone(),
        delta: point.delta,
        p: point.operator.p,
        s: point.operator.s,
        alpha: point.operator.alpha,
        beta: point.operator.beta,
        nodes: point.grid.nodes_per_axis,
        n_final: report.final_n(),
        iterations: report.total_iterations(),
        mixed_norm_p: last.map_or(f64::NAN, |s| s.mixed_norm_p),
        sup_norm: report.u_final.sup_norm(),
        residual: report.residual,
        mu_formula: None,
        mu_infimum: None,
        min_margin: None,
        checks_passed: false,
    };
    let mut checks = vec![VerificationRow {
        check: "converged".into(),
        params: id.clone(),
        metric: report.residual,
        threshold: scfg.tol_residual,
        pass: report.converged,
    }];
    out.artifacts.push(Artifact {
        name: format!("{id}_u.csv"),
        contents: report.u_final.to_csv(),
    });
    out.artifacts.push(Artifact {
        name: format!("{id}_stages.csv"),
        contents: stages_csv(&report)?,
    });

    let wants_extremal = point.delta < 1.0 && cfg.task != Task::Solve;
    if wants_extremal && report.converged {
        let ex = &cfg.extremal;
        let mut result = extremal_from_report(&report, point.delta, prob.f(), &op)?;
        let sob = verify_sobolev(
            result.mu,
            point.delta,
            prob.f(),
            &op,
            ex.samples,
            ex.c_factor,
            point.seed,
            Some(&result.v_delta),
        )?;
        row.mu_formula = Some(result.mu_from_formula);
        row.mu_infimum = Some(result.mu_from_infimum);
        row.min_margin = Some(sob.min_margin);
        result.inequality_margin = Some(sob.min_margin);
        checks.push(VerificationRow::at_most("extremal_gap", id.as_str(), result.relative_gap(), 1e-3));
        checks.push(VerificationRow::at_most("identity_defect", id.as_str(), result.identity_defect, 1e-3));
        checks.push(VerificationRow {
            check: "sobolev_min_margin".into(),
            params: id.clone(),
            metric: sob.min_margin,
            threshold: 0.0,
            pass: sob.all_nonnegative(),
        });
        let eq = sob.equality_margin.unwrap_or(f64::NAN).abs();
        checks.push(VerificationRow::at_most("sobolev_equality", id.as_str(), eq, 1e-3 * result.mu));
        if cfg.task != Task::Sweep {
            let records = verify_simplicity(&result.v_delta, point.delta, prob.f(), &op, ex.starts, point.seed)?;
            let worst = records.iter().map(|r| r.distance).fold(0.0, f64::max);
            let all_converged = records.iter().all(|r| r.converged);
            checks.push(VerificationRow {
                check: "simplicity".into(),
                params: id.clone(),
                metric: worst,
                threshold: 1e-2,
                pass: all_converged && worst < 1e-2,
            });
            let el = check_euler_lagrange_extremal(&result.v_delta, result.mu, point.delta, prob.f(), &op)?;
            checks.push(VerificationRow::at_most(
                "euler_lagrange",
                id.as_str(),
                el,
                10.0 * scfg.tol_residual,
            ));
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &records {
                w.serialize(r)?;
            }
            out.artifacts.push(Artifact {
                name: format!("{id}_simplicity.csv"),
                contents: csv_string(w)?,
            });
            result.simplicity_records = records;
        }
        out.artifacts.push(Artifact {
            name: format!("{id}_v_delta.csv"),
            contents: result.v_delta.to_csv(),
        });
        out.artifacts.push(Artifact {
            name: format!("{id}_extremal.json"),
            contents: serde_json::to_string_pretty(&serde_json::json!({
                "mu": result.mu,
                "mu_from_formula": result.mu_from_formula,
                "mu_from_infimum": result.mu_from_infimum,
                "tau_delta": result.tau_delta,
                "identity_defect": result.identity_defect,
                "constraint_defect": result.constraint_defect,
                "sobolev": sob,
                "simplicity": result.simplicity_records,
            }))?,
        });
    }

    if cfg.task == Task::Verify {
        checks.extend(report_rows(&report, &prob, scfg, id)?);
        let other = GridFunction::from_fn(prob.grid(), |_| 1.0)?;
        let second = solve_singular_from(&prob, scfg, Some(&other))?;
        checks.push(VerificationRow::at_most(
            "uniqueness",
            id.as_str(),
            second.u_final.sup_distance(&report.u_final),
            10.0 * scfg.tol_continuation,
        ));
        let big = prob.with_source(prob.f().scaled(2.0))?;
        let cmp = check_comparison(&prob, &big, scfg)?;
        checks.push(VerificationRow {
            check: "comparison".into(),
            params: id.clone(),
            metric: cmp.worst,
            threshold: crate::verify::COMPARISON_SLACK,
            pass: cmp.pass,
        });
        if point.delta < 1.0 {
            let modes = check_equivalence_modes(point.delta, prob.f(), op.kp, scfg)?;
            let worst = modes.modes.iter().map(|m| m.residual).fold(0.0, f64::max);
            checks.push(VerificationRow {
                check: "mode_equivalence".into(),
                params: id.clone(),
                metric: worst,
                threshold: scfg.tol_residual,
                pass: modes.pass,
            });
        }
    }

    row.checks_passed = checks.iter().all(|c| c.pass);
    out.row = Some(row);
    out.checks = checks;
    Ok(())
}

/// Runs every point of the experiment. Points run in parallel; results
/// keep the point order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let start = Instant::now();
    let results: Vec<PointResult> = points(cfg).par_iter().map(|p| run_point(cfg, p)).collect();
    let mut outcome = Outcome {
        task: cfg.task,
        rows: Vec::new(),
        checks: Vec::new(),
        artifacts: Vec::new(),
        failures: Vec::new(),
        elapsed_seconds: None,
    };
    for r in results {
        outcome.rows.extend(r.row);
        outcome.checks.extend(r.checks);
        outcome.artifacts.extend(r.artifacts);
        outcome.failures.extend(r.failure);
    }
    if !cfg.deterministic {
        outcome.elapsed_seconds = Some(start.elapsed().as_secs_f64());
    }
    Ok(outcome)
}

/// Runs the report-only checks on a given continuation report, without
/// solving. Useful for auditing stored or edited runs.
pub fn verify_report(cfg: &ExperimentConfig, report: &SolveReport) -> Result<Outcome> {
    let point = points(cfg).remove(0);
    let Prepared { prob, .. } = prepare(cfg, &point)?;
    let mut checks = vec![VerificationRow {
        check: "converged".into(),
        params: point.id.clone(),
        metric: report.residual,
        threshold: cfg.solver.tol_residual,
        pass: report.converged,
    }];
    checks.extend(report_rows(report, &prob, &cfg.solver, &point.id)?);
    Ok(Outcome {
        task: Task::Verify,
        rows: Vec::new(),
        checks,
        artifacts: Vec::new(),
        failures: Vec::new(),
        elapsed_seconds: None,
    })
}
