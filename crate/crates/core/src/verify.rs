//! Property checks over solve reports: hypothesis bookkeeping, monotone
//! approximation, comparison, symmetry, uniform bounds, gradient
//! convergence and agreement of the local, nonlocal and mixed modes.

use rayon::prelude::*;
use serde::Serialize;

use crate::energy::{mixed_norm_p, OperatorParams};
use crate::error::{Error, Result};
use crate::extremal::extremal_from_report;
use crate::grid::GridFunction;
use crate::kernels::KernelParams;
use crate::solver::{solve_singular, SingularProblem, SolveReport, SolverConfig};

/// Relative slack for the monotone-sequence check.
pub const MONOTONE_SLACK: f64 = 1e-8;
/// Relative slack for the comparison check.
pub const COMPARISON_SLACK: f64 = 1e-6;
pub const SYMMETRY_THRESHOLD: f64 = 1e-5;
pub const DEFAULT_MARGIN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SobolevCase {
    Subcritical,
    Borderline,
    Supercritical,
}

/// An integrability requirement on `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Exponent {
    Exactly(f64),
    /// Any exponent strictly above the value.
    Above(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Requirement {
    Existence,
    Regularity,
    Uniqueness,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegrabilityExponent {
    pub case: SobolevCase,
    pub m: Exponent,
    pub p_star: Option<f64>,
}

/// The Lebesgue exponent `f` must have for existence (`m`), boundedness
/// (`q`) or uniqueness (`t`).
pub fn required_integrability(p: f64, n: usize, delta: f64, which: Requirement) -> Result<IntegrabilityExponent> {
    if !(p > 1.0 && p.is_finite()) || n == 0 {
        return Err(Error::param(format!("need p > 1 and N >= 1, got p = {p}, N = {n}")));
    }
    if which == Requirement::Existence && !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("the existence exponent needs 0 < δ < 1, got {delta}")));
    }
    let nf = n as f64;
    let case = if p < nf {
        SobolevCase::Subcritical
    } else if p == nf {
        SobolevCase::Borderline
    } else {
        SobolevCase::Supercritical
    };
    let p_star = (case == SobolevCase::Subcritical).then(|| nf * p / (nf - p));
    let m = match (case, p_star) {
        (SobolevCase::Subcritical, Some(ps)) => match which {
            Requirement::Existence => Exponent::Exactly(ps / (ps - (1.0 - delta))),
            Requirement::Regularity => Exponent::Above(ps / (ps - p)),
            Requirement::Uniqueness => Exponent::Exactly(ps / (ps - 1.0)),
        },
        (SobolevCase::Borderline, _) => Exponent::Above(1.0),
        _ => Exponent::Exactly(1.0),
    };
    Ok(IntegrabilityExponent { case, m, p_star })
}

/// One line of the verification table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationRow {
    pub check: String,
    pub params: String,
    pub metric: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl VerificationRow {
    /// Row passing when `metric <= threshold`.
    pub fn at_most(check: &str, params: impl Into<String>, metric: f64, threshold: f64) -> Self {
        VerificationRow {
            check: check.to_owned(),
            params: params.into(),
            metric,
            threshold,
            pass: metric <= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneCheck {
    pub pass: bool,
    /// Largest `(u_n - u_{n+1}) / ‖u_final‖∞` over nodes and stages.
    pub worst_node: f64,
    /// `(stage, node)` of the worst nodal decrease, when it breaks the slack.
    pub witness: Option<(usize, usize)>,
    /// Largest relative decrease of `‖u_n‖^p`.
    pub worst_norm: f64,
}

fn require_stages(report: &SolveReport, min: usize) -> Result<()> {
    if report.per_n.len() < min {
        return Err(Error::param(format!(
            "check needs at least {min} stages, report has {}",
            report.per_n.len()
        )));
    }
    Ok(())
}

fn scale_of(report: &SolveReport) -> f64 {
    report.u_final.sup_norm().max(f64::MIN_POSITIVE)
}

pub fn check_monotone_sequence(report: &SolveReport) -> Result<MonotoneCheck> {
    require_stages(report, 2)?;
    let scale = scale_of(report);
    let mut worst_node = f64::NEG_INFINITY;
    let mut at = (0, 0);
    let mut worst_norm = f64::NEG_INFINITY;
    for (k, w) in report.per_n.windows(2).enumerate() {
        for (node, (a, b)) in w[0].u.values().iter().zip(w[1].u.values()).enumerate() {
            let drop = (a - b) / scale;
            if drop > worst_node {
                worst_node = drop;
                at = (k + 1, node);
            }
        }
        let rel = (w[0].mixed_norm_p - w[1].mixed_norm_p) / w[0].mixed_norm_p.max(f64::MIN_POSITIVE);
        worst_norm = worst_norm.max(rel);
    }
    let nodes_ok = worst_node <= MONOTONE_SLACK;
    Ok(MonotoneCheck {
        pass: nodes_ok && worst_norm <= MONOTONE_SLACK,
        worst_node,
        witness: (!nodes_ok).then_some(at),
        worst_norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonCheck {
    pub pass: bool,
    /// `max (u_small - u_big) / scale`.
    pub worst: f64,
    /// `max (u_big - u_small) / scale`.
    pub largest_gap: f64,
}

/// Solves both problems and checks `u_small <= u_big`.
pub fn check_comparison(
    small: &SingularProblem,
    big: &SingularProblem,
    cfg: &SolverConfig,
) -> Result<ComparisonCheck> {
    if small.delta() != big.delta() || small.op() != big.op() || !std::sync::Arc::ptr_eq(small.grid(), big.grid()) {
        return Err(Error::param("comparison needs the same δ, operator and grid"));
    }
    if let Some(node) = small
        .f()
        .values()
        .iter()
        .zip(big.f().values())
        .position(|(a, b)| a > b)
    {
        return Err(Error::param(format!("sources are not ordered at node {node}")));
    }
    let (a, b) = rayon::join(|| solve_singular(small, cfg), || solve_singular(big, cfg));
    let (a, b) = (a?, b?);
    for r in [&a, &b] {
        if !r.converged {
            return Err(Error::NoConvergence {
                what: "comparison solve",
                iterations: r.per_n.len(),
                metric: r.residual,
            });
        }
    }
    let scale = a.u_final.sup_norm().max(b.u_final.sup_norm()).max(f64::MIN_POSITIVE);
    let (worst, largest_gap) = a
        .u_final
        .values()
        .iter()
        .zip(b.u_final.values())
        .fold((f64::NEG_INFINITY, 0.0f64), |(w, g), (x, y)| {
            (w.max((x - y) / scale), g.max((y - x) / scale))
        });
    Ok(ComparisonCheck {
        pass: worst <= COMPARISON_SLACK,
        worst,
        largest_gap,
    })
}

/// `‖u - reflect(u)‖∞ / ‖u‖∞` about the midplane of `axis`.
pub fn check_symmetry(u: &GridFunction, axis: usize) -> Result<f64> {
    let r = u.reflect(axis)?;
    let scale = u.sup_norm();
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(u.sup_distance(&r) / scale)
}

/// Largest spread `(max - min) / ‖u‖∞` among interior nodes at equal
/// distance from the box centre. Nodes such as `(3, 4)` and `(5, 0)` are
/// not related by any lattice symmetry, so this probes true radial
/// symmetry rather than reflections.
pub fn check_radial_symmetry(u: &GridFunction) -> Result<f64> {
    let grid = u.grid();
    if grid.dim() != 2 {
        return Err(Error::param("radial symmetry needs a 2D grid"));
    }
    let n = grid.nodes_per_axis();
    if n % 2 == 0 {
        return Err(Error::param("radial symmetry needs a node at the centre"));
    }
    let c = (n / 2) as i64;
    let mut shells: std::collections::BTreeMap<i64, (f64, f64)> = Default::default();
    for k in 0..grid.interior_count() {
        let node = grid.node_of(k);
        let [i, j] = grid.axis_index(node);
        let r2 = (i as i64 - c).pow(2) + (j as i64 - c).pow(2);
        let v = u.values()[node];
        let e = shells.entry(r2).or_insert((v, v));
        e.0 = e.0.min(v);
        e.1 = e.1.max(v);
    }
    let scale = u.sup_norm();
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(shells.values().map(|(lo, hi)| hi - lo).fold(0.0, f64::max) / scale)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientTrace {
    /// `max |D u_n - D u_final|` over the compact nodes, one entry per stage
    /// before the last.
    pub trace: Vec<f64>,
    pub pass: bool,
}

/// Forward-difference gradient gap to the final stage. The last stage is
/// the reference itself and is left out of the trace.
pub fn check_gradient_convergence(report: &SolveReport, margin: usize, tol: f64) -> Result<GradientTrace> {
    require_stages(report, 3)?;
    let grid = report.u_final.grid();
    let nodes: Vec<usize> = grid
        .compact_unknowns(margin)
        .into_iter()
        .map(|k| grid.node_of(k))
        .collect();
    if nodes.is_empty() {
        return Err(Error::param(format!("no nodes lie {margin} cells inside the domain")));
    }
    let h = grid.spacing();
    let fin = report.u_final.values();
    let trace: Vec<f64> = report.per_n[..report.per_n.len() - 1]
        .iter()
        .map(|stage| {
            let u = stage.u.values();
            let e = |i: usize| u[i] - fin[i];
            nodes
                .iter()
                .flat_map(|&i| (0..grid.dim()).filter_map(move |ax| grid.neighbor(i, ax, 1).map(|j| (i, j))))
                .fold(0.0f64, |m, (i, j)| m.max(((e(j) - e(i)) / h).abs()))
        })
        .collect();
    let first = trace[0];
    let last = *trace.last().unwrap_or(&first);
    Ok(GradientTrace {
        pass: last < 10.0 * tol && last < first,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinftyCheck {
    pub pass: bool,
    pub max_sup: f64,
    pub final_sup: f64,
}

pub fn check_linfty_uniform(report: &SolveReport) -> Result<LinftyCheck> {
    require_stages(report, 2)?;
    let max_sup = report.per_n.iter().map(|s| s.sup_norm).fold(0.0, f64::max);
    let final_sup = report.u_final.sup_norm();
    Ok(LinftyCheck {
        pass: max_sup <= 1.05 * final_sup,
        max_sup,
        final_sup,
    })
}

/// `max_n ‖u_n^γ‖^p / ‖u_1^γ‖^p` with `γ = (δ + p - 1) / p`; bounded
/// uniformly in `n` when `δ > 1`.
pub fn power_norm_growth(report: &SolveReport, delta: f64, op: &OperatorParams) -> Result<f64> {
    require_stages(report, 2)?;
    let gamma = (delta + op.p() - 1.0) / op.p();
    let norms = report
        .per_n
        .iter()
        .map(|s| mixed_norm_p(&s.u.map_interior(|v| v.max(0.0).powf(gamma))?, op))
        .collect::<Result<Vec<f64>>>()?;
    let first = norms[0];
    if !(first > 0.0) {
        return Err(Error::param("first stage vanishes"));
    }
    Ok(norms.iter().fold(0.0f64, |m, v| m.max(*v)) / first)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeOutcome {
    pub alpha: f64,
    pub beta: f64,
    pub converged: bool,
    pub residual: f64,
    /// Extremal constant of this mode.
    pub mu: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub solution: Option<GridFunction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub modes: Vec<ModeOutcome>,
    pub pass: bool,
    /// `max (u_mixed - u_local) / scale`; informational.
    pub mixed_minus_local: Option<f64>,
}

/// Solves with `(α, β)` = (1,0), (0,1), (1,1).
pub fn check_equivalence_modes(
    delta: f64,
    f: &GridFunction,
    kp: KernelParams,
    cfg: &SolverConfig,
) -> Result<EquivalenceReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("mode equivalence needs 0 < δ < 1, got {delta}")));
    }
    let modes: Vec<ModeOutcome> = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
        .into_par_iter()
        .map(|(alpha, beta)| {
            let run = || -> Result<(SolveReport, Option<f64>)> {
                let op = OperatorParams::new(kp, alpha, beta)?;
                let prob = SingularProblem::new(delta, f.clone(), op)?;
                let rep = solve_singular(&prob, cfg)?;
                let mu = extremal_from_report(&rep, delta, f, &op).ok().map(|e| e.mu);
                Ok((rep, mu))
            };
            match run() {
                Ok((rep, mu)) => ModeOutcome {
                    alpha,
                    beta,
                    converged: rep.converged,
                    residual: rep.residual,
                    mu,
                    error: None,
                    solution: Some(rep.u_final),
                },
                Err(e) => ModeOutcome {
                    alpha,
                    beta,
                    converged: false,
                    residual: f64::INFINITY,
                    mu: None,
                    error: Some(e.to_string()),
                    solution: None,
                },
            }
        })
        .collect();
    let pass = modes.iter().all(|m| m.converged && m.residual < cfg.tol_residual);
    let mixed_minus_local = match (&modes[0].solution, &modes[2].solution) {
        (Some(local), Some(mixed)) => {
            let scale = local.sup_norm().max(f64::MIN_POSITIVE);
            Some(
                mixed
                    .values()
                    .iter()
                    .zip(local.values())
                    .fold(f64::NEG_INFINITY, |m, (a, b)| m.max((a - b) / scale)),
            )
        }
        _ => None,
    };
    Ok(EquivalenceReport {
        modes,
        pass,
        mixed_minus_local,
    })
}

/// The report-only checks as table rows.
pub fn report_rows(report: &SolveReport, prob: &SingularProblem, cfg: &SolverConfig, label: &str) -> Result<Vec<VerificationRow>> {
    let mut rows = Vec::new();
    let mono = check_monotone_sequence(report)?;
    rows.push(VerificationRow {
        check: "monotone_nodes".into(),
        params: label.into(),
        metric: mono.worst_node,
        threshold: MONOTONE_SLACK,
        pass: mono.worst_node <= MONOTONE_SLACK,
    });
    rows.push(VerificationRow::at_most("monotone_norm", label, mono.worst_norm, MONOTONE_SLACK));
    let linf = check_linfty_uniform(report)?;
    rows.push(VerificationRow::at_most("linfty_uniform", label, linf.max_sup / linf.final_sup, 1.05));
    rows.push(VerificationRow::at_most("residual", label, report.residual, cfg.tol_residual));
    if report.per_n.len() >= 3 {
        let g = check_gradient_convergence(report, DEFAULT_MARGIN, cfg.tol_continuation)?;
        let last = *g.trace.last().unwrap_or(&0.0);
        rows.push(VerificationRow {
            check: "gradient_convergence".into(),
            params: label.into(),
            metric: last,
            threshold: 10.0 * cfg.tol_continuation,
            pass: g.pass,
        });
    }
    if prob.delta() > 1.0 {
        let growth = power_norm_growth(report, prob.delta(), prob.op())?;
        rows.push(VerificationRow::at_most("power_norm_growth", label, growth, 2.0));
    }
    let grid = prob.grid();
    for axis in 0..grid.dim() {
        if grid.check_symmetric(axis).is_ok() && check_symmetry(prob.f(), axis)? <= 1e-12 {
            let threshold = match grid.shape() {
                crate::grid::Shape::Disk { .. } => 5.0 * grid.spacing().powi(2),
                _ => SYMMETRY_THRESHOLD,
            };
            rows.push(VerificationRow::at_most(
                &format!("symmetry_axis{axis}"),
                label,
                check_symmetry(&report.u_final, axis)?,
                threshold,
            ));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DomainSpec, Grid};
    use crate::solver::StageRecord;
    use approx::assert_relative_eq;
    use std::sync::OnceLock;

    fn kp() -> KernelParams {
        KernelParams::new(2.0, 0.5, 1).unwrap()
    }

    fn desk() -> &'static (SingularProblem, SolveReport) {
        static CELL: OnceLock<(SingularProblem, SolveReport)> = OnceLock::new();
        CELL.get_or_init(|| {
            let g = Grid::new(DomainSpec::interval(0.0, 1.0, 61)).unwrap();
            let f = GridFunction::from_fn(&g, |_| 1.0).unwrap();
            let prob = SingularProblem::new(0.5, f, OperatorParams::mixed(kp())).unwrap();
            let rep = solve_singular(&prob, &SolverConfig::default()).unwrap();
            (prob, rep)
        })
    }

    #[test]
    fn integrability_table() {
        use Requirement::*;
        let e = required_integrability(2.0, 3, 0.5, Existence).unwrap();
        assert_eq!(e.case, SobolevCase::Subcritical);
        assert_relative_eq!(e.p_star.unwrap(), 6.0);
        match e.m {
            Exponent::Exactly(m) => assert_relative_eq!(m, 12.0 / 11.0, max_relative = 1e-14),
            other => panic!("{other:?}"),
        }
        let r = required_integrability(2.0, 3, 0.5, Regularity).unwrap();
        assert_eq!(r.m, Exponent::Above(1.5));
        let u = required_integrability(2.0, 3, 0.5, Uniqueness).unwrap();
        match u.m {
            Exponent::Exactly(t) => assert_relative_eq!(t, 1.2, max_relative = 1e-14),
            other => panic!("{other:?}"),
        }
        for which in [Existence, Regularity, Uniqueness] {
            let sup = required_integrability(3.0, 2, 0.5, which).unwrap();
            assert_eq!((sup.case, sup.m, sup.p_star), (SobolevCase::Supercritical, Exponent::Exactly(1.0), None));
            let b = required_integrability(2.0, 2, 0.5, which).unwrap();
            assert_eq!((b.case, b.m), (SobolevCase::Borderline, Exponent::Above(1.0)));
        }
        assert!(required_integrability(2.0, 3, 1.5, Existence).is_err());
        assert!(required_integrability(2.0, 3, 1.5, Uniqueness).is_ok());
        assert!(required_integrability(1.0, 3, 0.5, Existence).is_err());
    }

    #[test]
    fn desk_checks_pass() {
        let (prob, rep) = desk();
        assert!(rep.converged);
        let m = check_monotone_sequence(rep).unwrap();
        assert!(m.pass, "{m:?}");
        assert!(check_linfty_uniform(rep).unwrap().pass);
        let g = check_gradient_convergence(rep, 3, 1e-8).unwrap();
        assert!(g.pass, "{:?}", g.trace);
        assert!(check_symmetry(&rep.u_final, 0).unwrap() < SYMMETRY_THRESHOLD);
        let rows = report_rows(rep, prob, &SolverConfig::default(), "desk").unwrap();
        assert!(rows.iter().all(|r| r.pass), "{rows:?}");
        assert!(check_gradient_convergence(rep, 40, 1e-8).is_err());
    }

    #[test]
    fn corrupted_reports_fail() {
        let (_, rep) = desk();
        let mut swapped = rep.clone();
        let k = swapped.per_n.len();
        swapped.per_n.swap(k - 1, 0);
        let m = check_monotone_sequence(&swapped).unwrap();
        assert!(!m.pass && m.witness.is_some());

        let mut spiked = rep.clone();
        spiked.per_n[1].sup_norm = 2.0 * rep.u_final.sup_norm();
        assert!(!check_linfty_uniform(&spiked).unwrap().pass);

        let mut single = rep.clone();
        single.per_n.truncate(1);
        assert!(check_monotone_sequence(&single).is_err());
        assert!(check_linfty_uniform(&single).is_err());
    }

    #[test]
    fn flat_report_has_flat_trace() {
        let (_, rep) = desk();
        let last: StageRecord = rep.per_n.last().unwrap().clone();
        let mut flat = rep.clone();
        flat.per_n = vec![last.clone(), last.clone(), last];
        let g = check_gradient_convergence(&flat, 3, 1e-8).unwrap();
        assert!(g.trace.iter().all(|v| *v == 0.0));
        let m = check_monotone_sequence(&flat).unwrap();
        assert!(m.pass);
        assert_eq!(check_linfty_uniform(&flat).unwrap().max_sup, rep.u_final.sup_norm());
    }

    #[test]
    fn symmetry_values() {
        let g = Grid::new(DomainSpec::interval(0.0, 1.0, 21)).unwrap();
        let sym = GridFunction::from_fn(&g, |x| x[0] * (1.0 - x[0])).unwrap();
        assert!(check_symmetry(&sym, 0).unwrap() < 1e-14);
        let skew = GridFunction::from_fn(&g, |x| x[0]).unwrap();
        assert!(check_symmetry(&skew, 0).unwrap() > 0.5);

        let d = Grid::new(DomainSpec::disk(1.0, 21)).unwrap();
        let radial = GridFunction::from_fn(&d, |x| 1.0 - x[0] * x[0] - x[1] * x[1]).unwrap();
        assert!(check_radial_symmetry(&radial).unwrap() < 1e-14);
        let square = GridFunction::from_fn(&d, |x| 1.0 - x[0].powi(4) - x[1].powi(4)).unwrap();
        assert!(check_radial_symmetry(&square).unwrap() > 1e-3);
        assert!(check_symmetry(&square, 1).unwrap() < 1e-14);
        assert!(check_radial_symmetry(&sym).is_err());
    }

    #[test]
    fn comparison_runs() {
        let (prob, _) = desk();
        let cfg = SolverConfig::default();
        let same = check_comparison(prob, prob, &cfg).unwrap();
        assert!(same.pass && same.largest_gap <= 1e-7);
        let bump = prob
            .f()
            .grid()
            .clone();
        let f2 = GridFunction::from_fn(&bump, |x| 1.0 + (-(x[0] - 0.5).powi(2) / 0.01).exp()).unwrap();
        let big = prob.with_source(f2).unwrap();
        let c = check_comparison(prob, &big, &cfg).unwrap();
        assert!(c.pass && c.largest_gap > 1e-3, "{c:?}");
        assert!(check_comparison(&big, prob, &cfg).is_err());
    }

    #[test]
    fn modes_all_converge() {
        let (prob, _) = desk();
        let r = check_equivalence_modes(0.5, prob.f(), kp(), &SolverConfig::default()).unwrap();
        assert!(r.pass, "{:?}", r.modes);
        assert!(r.modes.iter().all(|m| m.mu.is_some()));
        assert!(r.mixed_minus_local.is_some());
        assert!(check_equivalence_modes(1.0, prob.f(), kp(), &SolverConfig::default()).is_err());
    }
}
