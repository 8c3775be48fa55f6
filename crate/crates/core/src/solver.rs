//! Solve paths: the auxiliary problem with a nonnegative right-hand side,
//! the regularized problems along a schedule of `n`, the singular limit, and
//! the obstacle problem for the truncated functional.
//!
//! Minimization is damped Newton with Armijo backtracking on the exact
//! discrete functionals. For `p = 2` with a linear source the Hessian is
//! constant and its Cholesky factor is reused.

use std::sync::Arc;

use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::energy::{solve_linear, Curvature, EnergyModel, Objective, OperatorParams, Source};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};

/// How the source term `f` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Constant { value: f64 },
    /// `c |x - centre|^gamma`, centred at the box centre.
    RadialPower { c: f64, gamma: f64 },
    /// Nodal values in the grid CSV layout.
    Nodal { path: String },
}

impl SourceSpec {
    /// Checks the admissibility conditions that do not need a grid.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            SourceSpec::Constant { value } => {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(Error::param(format!("f must be finite and >= 0, got {value}")));
                }
            }
            SourceSpec::RadialPower { c, gamma } => {
                if !(c >= 0.0 && c.is_finite()) {
                    return Err(Error::param(format!("radial coefficient must be >= 0, got {c}")));
                }
                if !(gamma > -(dim as f64)) || !gamma.is_finite() {
                    return Err(Error::param(format!(
                        "radial exponent must exceed -{dim} for integrability, got {gamma}"
                    )));
                }
            }
            SourceSpec::Nodal { ref path } => {
                if path.is_empty() {
                    return Err(Error::param("nodal source path is empty"));
                }
            }
        }
        Ok(())
    }

    /// Samples the source on `grid`. Relative paths resolve against `base`.
    pub fn sample(&self, grid: &Arc<Grid>, base: Option<&std::path::Path>) -> Result<GridFunction> {
        self.validate(grid.dim())?;
        match *self {
            SourceSpec::Constant { value } => GridFunction::from_fn(grid, |_| value),
            SourceSpec::RadialPower { c, gamma } => {
                let centre = grid.center();
                // a node sitting on the singularity takes the value at h/2
                let floor = 0.5 * grid.spacing();
                GridFunction::from_fn(grid, |x| {
                    let r = (x[0] - centre[0]).hypot(x[1] - centre[1]);
                    c * r.max(floor).powf(gamma)
                })
            }
            SourceSpec::Nodal { ref path } => {
                let full = match base {
                    Some(dir) => dir.join(path),
                    None => path.into(),
                };
                let text = std::fs::read_to_string(&full)?;
                let f = GridFunction::from_csv(grid, &text)?;
                if let Some(v) = f.values().iter().find(|v| **v < 0.0) {
                    return Err(Error::param(format!("nodal source has negative value {v}")));
                }
                Ok(f)
            }
        }
    }
}

/// Tolerances and schedules shared by every solve path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Newton stops once a step lowers the energy by less than this,
    /// relative, and the gradient is already small.
    pub tol_energy: f64,
    /// Relative gradient size at which Newton stops.
    pub tol_gradient: f64,
    /// Target for the weak residual of the singular problem.
    pub tol_residual: f64,
    /// Sup-norm gap between consecutive `n` that ends the continuation.
    pub tol_continuation: f64,
    /// Relative sup-norm fixed-point gap that ends a Picard loop.
    pub tol_picard: f64,
    pub max_iters: usize,
    pub max_picard: usize,
    pub n_schedule: Vec<u64>,
    pub armijo_c: f64,
    pub backtrack: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_energy: 1e-15,
            tol_gradient: 1e-12,
            tol_residual: 1e-8,
            tol_continuation: 1e-8,
            tol_picard: 1e-11,
            max_iters: 200,
            max_picard: 4000,
            n_schedule: (0..=50).map(|k| 1u64 << k).collect(),
            armijo_c: 1e-4,
            backtrack: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol_energy", self.tol_energy),
            ("tol_gradient", self.tol_gradient),
            ("tol_residual", self.tol_residual),
            ("tol_continuation", self.tol_continuation),
            ("tol_picard", self.tol_picard),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iters == 0 || self.max_picard == 0 {
            return Err(Error::param("iteration limits must be positive"));
        }
        if self.n_schedule.is_empty() || self.n_schedule[0] == 0 {
            return Err(Error::param("n_schedule must be non-empty and start at n >= 1"));
        }
        if self.n_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("n_schedule must be strictly increasing"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 0.5) {
            return Err(Error::param(format!("armijo_c must lie in (0, 1/2), got {}", self.armijo_c)));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::param(format!("backtrack must lie in (0, 1), got {}", self.backtrack)));
        }
        Ok(())
    }
}

/// Result of one Newton minimization.
#[derive(Debug, Clone)]
pub struct Minimized {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Objective value before the first step and after every step.
    pub energies: Vec<f64>,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Newton direction `-H^{-1} g`, shifting the diagonal if `H` is not
/// numerically positive definite.
fn newton_direction(hess: DMatrix<f64>, grad: &[f64]) -> Result<Vec<f64>> {
    let rhs = DVector::from_iterator(grad.len(), grad.iter().map(|g| -g));
    let diag_max = hess.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut shift = 0.0;
    for _ in 0..20 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += shift;
        }
        if let Some(chol) = Cholesky::new(h) {
            return Ok(chol.solve(&rhs).as_slice().to_vec());
        }
        shift = if shift == 0.0 { 1e-12 * diag_max } else { shift * 100.0 };
    }
    Err(Error::Linear("Hessian could not be regularized".into()))
}

/// Relative size of the gradient: compared against the source part, which
/// sets the natural scale of every functional here.
fn gradient_ratio(obj: &Objective<'_>, x: &[f64], grad: &[f64]) -> f64 {
    let scale = sup(&obj.source_gradient(x));
    let g = sup(grad);
    if scale > 0.0 {
        g / scale
    } else {
        g
    }
}

/// Damped Newton with Armijo backtracking.
pub fn minimize(obj: &Objective<'_>, x0: Vec<f64>, cfg: &SolverConfig) -> Result<Minimized> {
    obj.validate()?;
    let model = obj.model();
    if x0.len() != model.unknowns() {
        return Err(Error::Length {
            expected: model.unknowns(),
            got: x0.len(),
        });
    }
    let mut energies = vec![obj.value(&x0)];
    if obj.is_quadratic() {
        let b = obj.source_gradient(&x0);
        let x = solve_linear(model, &b)?;
        energies.push(obj.value(&x));
        return Ok(Minimized {
            x,
            iterations: 1,
            energies,
        });
    }
    // below p = 2 exact Newton flips the sign of near-zero differences
    let curvature = if model.op().p() < 2.0 {
        Curvature::Majorizer
    } else {
        Curvature::Exact
    };
    let mut x = x0;
    let mut value = energies[0];
    for it in 0..cfg.max_iters {
        let grad = obj.gradient(&x);
        let ratio = gradient_ratio(obj, &x, &grad);
        if ratio <= cfg.tol_gradient {
            return Ok(Minimized {
                x,
                iterations: it,
                energies,
            });
        }
        let d = newton_direction(obj.curvature(&x, curvature), &grad)?;
        let slope = dot(&grad, &d);
        if slope >= 0.0 {
            return Err(Error::Linear("Newton direction is not a descent direction".into()));
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let fv = obj.value(&trial);
            if fv <= value + cfg.armijo_c * t * slope {
                accepted = Some((trial, fv));
                break;
            }
            // the predicted decrease is below rounding of the energy itself
            if (t * slope).abs() <= 1e-14 * value.abs() && fv <= value + 1e-14 * value.abs() {
                accepted = Some((trial, fv));
                break;
            }
            t *= cfg.backtrack;
        }
        let Some((trial, fv)) = accepted else {
            if ratio <= cfg.tol_gradient.sqrt() {
                debug!("line search stalled at gradient ratio {ratio:e}; accepting");
                return Ok(Minimized {
                    x,
                    iterations: it,
                    energies,
                });
            }
            return Err(Error::NoConvergence {
                what: "Newton line search",
                iterations: it,
                metric: ratio,
            });
        };
        // the majorizer underestimates steps along well-separated differences
        let (trial, fv) = if curvature == Curvature::Majorizer && t == 1.0 {
            let mut best = (trial, fv);
            let mut s = 2.0;
            while s <= 8.0 {
                let cand: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + s * b).collect();
                let cv = obj.value(&cand);
                if cv >= best.1 {
                    break;
                }
                best = (cand, cv);
                t = s;
                s *= 2.0;
            }
            best
        } else {
            (trial, fv)
        };
        let step = t * sup(&d);
        let decrease = value - fv;
        x = trial;
        value = fv;
        energies.push(fv);
        let tiny_step = step <= 1e-15 * sup(&x).max(f64::MIN_POSITIVE);
        let flat = decrease.abs() <= cfg.tol_energy * value.abs().max(f64::MIN_POSITIVE);
        if tiny_step || (flat && ratio <= 10.0 * cfg.tol_gradient) {
            return Ok(Minimized {
                x,
                iterations: it + 1,
                energies,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "Newton",
        iterations: cfg.max_iters,
        metric: gradient_ratio(obj, &x, &obj.gradient(&x)),
    })
}

/// Minimizer of `J(v) = (1/p)‖v‖^p - ∫ g v` for `g >= 0`.
pub fn solve_auxiliary(g: &GridFunction, op: &OperatorParams, cfg: &SolverConfig) -> Result<GridFunction> {
    cfg.validate()?;
    let model = EnergyModel::new(g.grid(), *op)?;
    let gv = g.interior_values();
    if let Some(v) = gv.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::param(format!("right-hand side must be finite and >= 0, got {v}")));
    }
    let out = minimize(&model.objective(Source::Linear { g: &gv }), vec![0.0; gv.len()], cfg)?;
    let x = clamp_small_negatives(out.x, cfg)?;
    GridFunction::zero_extend(g.grid(), &x)
}

fn clamp_small_negatives(mut x: Vec<f64>, cfg: &SolverConfig) -> Result<Vec<f64>> {
    let scale = sup(&x);
    for (node, v) in x.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -cfg.tol_residual * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::NegativeMinimizer { node, value: *v });
            }
            *v = 0.0;
        }
    }
    Ok(x)
}

/// The singular problem: exponent, source and operator.
#[derive(Debug, Clone)]
pub struct SingularProblem {
    delta: f64,
    f: GridFunction,
    op: OperatorParams,
}

impl SingularProblem {
    pub fn new(delta: f64, f: GridFunction, op: OperatorParams) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::param(format!("δ must be positive, got {delta}")));
        }
        if let Some(v) = f.values().iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::param(format!("f must be finite and >= 0, got {v}")));
        }
        if op.kp.dim != f.grid().dim() {
            return Err(Error::param("operator and grid dimensions differ"));
        }
        if f.sup_norm() == 0.0 {
            warn!("source vanishes identically; every regularized solution is zero");
        }
        Ok(SingularProblem { delta, f, op })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn f(&self) -> &GridFunction {
        &self.f
    }

    pub fn op(&self) -> &OperatorParams {
        &self.op
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.f.grid()
    }

    /// Same problem with another source.
    pub fn with_source(&self, f: GridFunction) -> Result<Self> {
        SingularProblem::new(self.delta, f, self.op)
    }
}

/// One regularized solve along the schedule.
#[derive(Debug, Clone)]
pub struct StageRecord {
    pub n: u64,
    pub u: GridFunction,
    pub picard_iterations: usize,
    pub newton_iterations: usize,
    /// Residual of the regularized equation at `u`.
    pub residual: f64,
    pub mixed_norm_p: f64,
    pub sup_norm: f64,
    /// Smallest value on the nodes at least three cells inside.
    pub compact_min: f64,
    /// Sup distance between the Picard result and the direct minimizer of
    /// `I_n`, when that cross-check applies (`δ < 1`).
    pub cross_check: Option<f64>,
}

/// One Newton step of some auxiliary solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub n: u64,
    pub picard: usize,
    pub newton: usize,
    pub energy: f64,
    pub residual: f64,
    pub sup_norm: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub u_final: GridFunction,
    pub per_n: Vec<StageRecord>,
    pub converged: bool,
    pub traces: Vec<TraceRow>,
    /// Weak residual of the singular problem at `u_final`.
    pub residual: f64,
}

impl SolveReport {
    pub fn total_iterations(&self) -> usize {
        self.per_n.iter().map(|s| s.picard_iterations).sum()
    }

    pub fn final_n(&self) -> u64 {
        self.per_n.last().map_or(0, |s| s.n)
    }

    /// True when every Newton solve in the trace lowered its energy,
    /// allowing rounding of relative size `slack`.
    pub fn traces_monotone(&self, slack: f64) -> bool {
        self.traces.windows(2).all(|w| {
            let same_solve = w[0].n == w[1].n && w[0].picard == w[1].picard;
            !same_solve || w[1].energy <= w[0].energy + slack * w[0].energy.abs()
        })
    }
}

/// Cached state for solving one problem repeatedly.
struct Engine<'a> {
    prob: &'a SingularProblem,
    cfg: &'a SolverConfig,
    model: EnergyModel,
    f: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(prob: &'a SingularProblem, cfg: &'a SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let model = EnergyModel::new(prob.grid(), prob.op)?;
        Ok(Engine {
            prob,
            cfg,
            model,
            f: prob.f.interior_values(),
        })
    }

    fn regularized(&self, n: u64) -> Objective<'_> {
        self.model.objective(Source::Regularized {
            f: &self.f,
            n: n as f64,
            delta: self.prob.delta,
        })
    }

    fn regularized_residual(&self, n: u64, x: &[f64]) -> f64 {
        let obj = self.regularized(n);
        gradient_ratio(&obj, x, &obj.gradient(x))
    }

    /// `T(h) = argmin J` with right-hand side `min(f,n)/(h⁺+1/n)^δ`.
    fn picard_map(&self, n: u64, h: &[f64], warm: Vec<f64>) -> Result<Minimized> {
        let nf = n as f64;
        let rhs: Vec<f64> = h
            .iter()
            .zip(&self.f)
            .map(|(&v, &f)| f.min(nf) * (v.max(0.0) + 1.0 / nf).powf(-self.prob.delta))
            .collect();
        minimize(&self.model.objective(Source::Linear { g: &rhs }), warm, self.cfg)
    }

    /// Fixed point of the Picard map for one `n`.
    fn solve_stage(&self, n: u64, start: Vec<f64>, traces: &mut Vec<TraceRow>) -> Result<(Vec<f64>, usize, usize)> {
        let cfg = self.cfg;
        let mut h = start;
        let mut warm = h.clone();
        let mut theta = 1.0f64;
        let mut rises = 0;
        let mut prev_gap = f64::INFINITY;
        let mut newton_total = 0;
        for it in 1..=cfg.max_picard {
            let out = self.picard_map(n, &h, warm)?;
            newton_total += out.iterations;
            let sup_t = sup(&out.x);
            for (k, e) in out.energies.iter().enumerate() {
                traces.push(TraceRow {
                    n,
                    picard: it,
                    newton: k,
                    energy: *e,
                    residual: f64::NAN,
                    sup_norm: sup_t,
                });
            }
            let gap = h.iter().zip(&out.x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if gap > 0.95 * prev_gap {
                rises += 1;
                if rises >= 2 && theta > 1.0 / 32.0 {
                    theta *= 0.5;
                    rises = 0;
                    debug!("n = {n}: Picard stagnating, damping to {theta}");
                }
            }
            prev_gap = gap;
            h = h
                .iter()
                .zip(&out.x)
                .map(|(a, b)| (1.0 - theta) * a + theta * b)
                .collect();
            warm = out.x;
            if gap <= cfg.tol_picard * sup(&h).max(f64::MIN_POSITIVE) {
                let res = self.regularized_residual(n, &h);
                if let Some(last) = traces.last_mut() {
                    last.residual = res;
                }
                if res <= 0.1 * cfg.tol_residual {
                    return Ok((h, it, newton_total));
                }
            }
        }
        Err(Error::NoConvergence {
            what: "Picard iteration",
            iterations: cfg.max_picard,
            metric: prev_gap,
        })
    }

    fn direct(&self, n: u64, start: Vec<f64>) -> Result<Vec<f64>> {
        let obj = self.model.objective(Source::Approximate {
            f: &self.f,
            n: n as f64,
            delta: self.prob.delta,
        });
        Ok(minimize(&obj, start, self.cfg)?.x)
    }

    fn record(&self, n: u64, x: Vec<f64>, picard: usize, newton: usize, cross: Option<f64>) -> Result<StageRecord> {
        let grid = self.prob.grid();
        let compact = grid.compact_unknowns(3);
        let compact_min = compact.iter().map(|&k| x[k]).fold(f64::INFINITY, f64::min);
        Ok(StageRecord {
            n,
            residual: self.regularized_residual(n, &x),
            mixed_norm_p: self.model.mixed_norm_p(&x),
            sup_norm: sup(&x),
            compact_min,
            cross_check: cross,
            picard_iterations: picard,
            newton_iterations: newton,
            u: GridFunction::zero_extend(grid, &x)?,
        })
    }
}

/// Solution of the regularized problem for one `n` by Picard iteration.
/// For `δ < 1` the result is compared with the direct minimizer of `I_n`
/// and an error is raised if they differ by more than `10 tol_residual`.
pub fn solve_approximated(
    n: u64,
    prob: &SingularProblem,
    cfg: &SolverConfig,
    warm_start: Option<&GridFunction>,
) -> Result<GridFunction> {
    if n == 0 {
        return Err(Error::param("n must be at least 1"));
    }
    let engine = Engine::new(prob, cfg)?;
    let start = match warm_start {
        Some(w) => w.interior_values(),
        None => vec![0.0; engine.f.len()],
    };
    if prob.f.sup_norm() == 0.0 {
        return Ok(GridFunction::zeros(prob.grid()));
    }
    let mut traces = Vec::new();
    let (x, _, _) = engine.solve_stage(n, start.clone(), &mut traces)?;
    if prob.delta < 1.0 {
        let y = engine.direct(n, start)?;
        let gap = x.iter().zip(&y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if gap > 10.0 * cfg.tol_residual {
            return Err(Error::NoConvergence {
                what: "Picard/direct cross-check",
                iterations: 1,
                metric: gap,
            });
        }
    }
    GridFunction::zero_extend(prob.grid(), &x)
}

/// Continuation in `n` towards the singular solution, starting from zero.
pub fn solve_singular(prob: &SingularProblem, cfg: &SolverConfig) -> Result<SolveReport> {
    solve_singular_from(prob, cfg, None)
}

/// Continuation in `n` with an explicit first iterate.
pub fn solve_singular_from(
    prob: &SingularProblem,
    cfg: &SolverConfig,
    initial: Option<&GridFunction>,
) -> Result<SolveReport> {
    if prob.f.sup_norm() == 0.0 {
        return Err(Error::param("the singular problem needs f > 0 somewhere"));
    }
    let engine = Engine::new(prob, cfg)?;
    let mut x = match initial {
        Some(u) => u.interior_values(),
        None => vec![0.0; engine.f.len()],
    };
    let mut per_n: Vec<StageRecord> = Vec::new();
    let mut traces = Vec::new();
    let mut converged = false;
    let mut residual = f64::INFINITY;
    for &n in &cfg.n_schedule {
        let (next, picard, newton) = engine.solve_stage(n, x.clone(), &mut traces)?;
        let cross = if prob.delta < 1.0 {
            let y = engine.direct(n, x.clone())?;
            Some(next.iter().zip(&y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
        } else {
            None
        };
        let gap = per_n
            .last()
            .map(|_| next.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())));
        x = next;
        per_n.push(engine.record(n, x.clone(), picard, newton, cross)?);
        residual = match engine.model.weak_residual(&x, &engine.f, prob.delta, 1.0) {
            Ok(r) => r,
            Err(Error::NotPositive { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        debug!("n = {n}: picard {picard}, gap {gap:?}, residual {residual:e}");
        if let Some(gap) = gap {
            if gap < cfg.tol_continuation && residual < cfg.tol_residual {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        warn!("schedule exhausted before the continuation tolerance was met");
    }
    Ok(SolveReport {
        u_final: GridFunction::zero_extend(prob.grid(), &x)?,
        per_n,
        converged,
        traces,
        residual,
    })
}

/// Minimizer of `J_k` over `{0 <= φ <= v_upper}` by projected Newton with
/// an Armijo search along the projection arc.
pub fn solve_obstacle(
    v_upper: &GridFunction,
    k: f64,
    prob: &SingularProblem,
    cfg: &SolverConfig,
) -> Result<GridFunction> {
    cfg.validate()?;
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::param(format!("k must be positive, got {k}")));
    }
    let upper = v_upper.interior_values();
    if let Some((node, &value)) = upper.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NotPositive { node, value });
    }
    let model = EnergyModel::new(prob.grid(), prob.op)?;
    let f = prob.f.interior_values();
    let obj = model.objective(Source::Truncated {
        f: &f,
        k,
        delta: prob.delta,
    });
    let project = |x: &mut [f64]| {
        for (v, &hi) in x.iter_mut().zip(&upper) {
            *v = v.clamp(0.0, hi);
        }
    };
    let curvature = if prob.op.p() < 2.0 {
        Curvature::Majorizer
    } else {
        Curvature::Exact
    };
    let mut x: Vec<f64> = upper.iter().map(|u| 0.5 * u).collect();
    let mut value = obj.value(&x);
    let scale = sup(&obj.source_gradient(&x)).max(f64::MIN_POSITIVE);
    for _ in 0..cfg.max_iters {
        let grad = obj.gradient(&x);
        // KKT residual: gradient components not held by an active bound
        let kkt = x
            .iter()
            .zip(&grad)
            .zip(&upper)
            .map(|((&xi, &gi), &hi)| {
                if (xi <= 0.0 && gi > 0.0) || (xi >= hi && gi < 0.0) {
                    0.0
                } else {
                    gi.abs()
                }
            })
            .fold(0.0f64, f64::max);
        if kkt <= cfg.tol_gradient * scale {
            return GridFunction::zero_extend(prob.grid(), &x);
        }
        let hess = obj.curvature(&x, curvature);
        // width of the near-active band: the scaled projected-gradient step
        let mut probe: Vec<f64> = (0..x.len())
            .map(|i| x[i] - grad[i] / hess[(i, i)].max(f64::MIN_POSITIVE))
            .collect();
        project(&mut probe);
        let width = sup(&x.iter().zip(&probe).map(|(a, b)| a - b).collect::<Vec<_>>());
        let active: Vec<bool> = (0..x.len())
            .map(|i| {
                let band = width.min(0.01 * upper[i]);
                (x[i] <= band && grad[i] > 0.0) || (x[i] >= upper[i] - band && grad[i] < 0.0)
            })
            .collect();
        let free: Vec<usize> = (0..x.len()).filter(|&i| !active[i]).collect();
        let mut d = vec![0.0; x.len()];
        if !free.is_empty() {
            let sub = DMatrix::from_fn(free.len(), free.len(), |a, b| hess[(free[a], free[b])]);
            let gf: Vec<f64> = free.iter().map(|&i| grad[i]).collect();
            let df = newton_direction(sub, &gf)?;
            for (a, &i) in free.iter().enumerate() {
                d[i] = df[a];
            }
        }
        for i in (0..x.len()).filter(|&i| active[i]) {
            d[i] = -grad[i] / hess[(i, i)].max(f64::MIN_POSITIVE);
        }
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..80 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            project(&mut trial);
            let predicted: f64 = (0..x.len())
                .map(|i| {
                    if active[i] {
                        grad[i] * (trial[i] - x[i])
                    } else {
                        t * grad[i] * d[i]
                    }
                })
                .sum();
            let fv = obj.value(&trial);
            if fv <= value + cfg.armijo_c * predicted.min(0.0)
                || (predicted.abs() <= 1e-14 * value.abs() && fv <= value + 1e-14 * value.abs())
            {
                moved = trial != x;
                x = trial;
                value = fv;
                break;
            }
            t *= cfg.backtrack;
        }
        if !moved {
            if kkt <= cfg.tol_gradient.sqrt() * scale {
                return GridFunction::zero_extend(prob.grid(), &x);
            }
            return Err(Error::NoConvergence {
                what: "projected Newton",
                iterations: cfg.max_iters,
                metric: kkt / scale,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "projected Newton",
        iterations: cfg.max_iters,
        metric: f64::NAN,
    })
}
