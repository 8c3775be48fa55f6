//! The Sobolev-type extremal problem for `0 < δ < 1`:
//! `μ = inf { ‖v‖^p : ∫|v|^{1-δ} f = 1 }`, its minimizer `V_δ`, the
//! inequality `C (∫|v|^{1-δ} f)^{p/(1-δ)} <= ‖v‖^p` for `C <= μ`, and
//! uniqueness of the minimizer up to sign.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::energy::{solve_linear, Curvature, EnergyModel, OperatorParams};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::solver::SolveReport;

fn require_sublinear(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("the extremal problem needs 0 < δ < 1, got {delta}")));
    }
    Ok(())
}

/// `h^N sum |v|^{1-δ} f`.
pub fn constraint_integral(v: &[f64], f: &[f64], delta: f64, cell: f64) -> f64 {
    cell * v
        .iter()
        .zip(f)
        .map(|(x, w)| w * x.abs().powf(1.0 - delta))
        .sum::<f64>()
}

/// Factor `τ` with `∫|τ u|^{1-δ} f = 1`.
pub fn normalization_tau(u: &GridFunction, delta: f64, f: &GridFunction) -> Result<f64> {
    require_sublinear(delta)?;
    let integral = constraint_integral(
        &u.interior_values(),
        &f.interior_values(),
        delta,
        u.grid().cell_volume(),
    );
    if !(integral > 0.0) {
        return Err(Error::param("constraint integral vanishes: u and f have disjoint supports"));
    }
    Ok(integral.powf(-1.0 / (1.0 - delta)))
}

/// Scale-invariant quotient `‖v‖^p / (∫|v|^{1-δ} f)^{p/(1-δ)}`.
pub fn quotient(model: &EnergyModel, v: &[f64], f: &[f64], delta: f64) -> f64 {
    let p = model.op().p();
    let c = constraint_integral(v, f, delta, model.grid().cell_volume());
    model.mixed_norm_p(v) / c.powf(p / (1.0 - delta))
}

/// Sobolev margin `‖v‖^p - C (∫|v|^{1-δ} f)^{p/(1-δ)}`.
pub fn margin(model: &EnergyModel, v: &[f64], f: &[f64], delta: f64, c: f64) -> f64 {
    let p = model.op().p();
    let integral = constraint_integral(v, f, delta, model.grid().cell_volume());
    model.mixed_norm_p(v) - c * integral.powf(p / (1.0 - delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimplicityRecord {
    pub start: usize,
    /// `min(‖w - V‖∞, ‖w + V‖∞) / ‖V‖∞` at the end.
    pub distance: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ExtremalResult {
    pub mu: f64,
    pub tau_delta: f64,
    pub v_delta: GridFunction,
    /// `‖u_δ‖^{p(1-δ-p)/(1-δ)}`.
    pub mu_from_formula: f64,
    /// `‖V_δ‖^p`.
    pub mu_from_infimum: f64,
    /// Relative gap between `‖u_δ‖^p` and `∫ u_δ^{1-δ} f`.
    pub identity_defect: f64,
    /// `|∫ V_δ^{1-δ} f - 1|`.
    pub constraint_defect: f64,
    pub inequality_margin: Option<f64>,
    pub simplicity_records: Vec<SimplicityRecord>,
}

impl ExtremalResult {
    /// `|mu_from_formula - mu_from_infimum| / μ`.
    pub fn relative_gap(&self) -> f64 {
        (self.mu_from_formula - self.mu_from_infimum).abs() / self.mu
    }
}

/// μ both ways from a converged singular solution.
pub fn extremal_constant(
    u_delta: &GridFunction,
    delta: f64,
    f: &GridFunction,
    op: &OperatorParams,
) -> Result<ExtremalResult> {
    require_sublinear(delta)?;
    let model = EnergyModel::new(u_delta.grid(), *op)?;
    let x = u_delta.interior_values();
    if let Some((node, &value)) = x.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NotPositive { node, value });
    }
    let fv = f.interior_values();
    let p = op.p();
    let norm = model.mixed_norm_p(&x);
    let integral = constraint_integral(&x, &fv, delta, model.grid().cell_volume());
    let mu_from_formula = norm.powf((1.0 - delta - p) / (1.0 - delta));
    let tau = normalization_tau(u_delta, delta, f)?;
    let v_delta = u_delta.scaled(tau);
    let vx = v_delta.interior_values();
    let mu_from_infimum = model.mixed_norm_p(&vx);
    let constraint = constraint_integral(&vx, &fv, delta, model.grid().cell_volume());
    Ok(ExtremalResult {
        mu: mu_from_formula,
        tau_delta: tau,
        v_delta,
        mu_from_formula,
        mu_from_infimum,
        identity_defect: (norm - integral).abs() / integral,
        constraint_defect: (constraint - 1.0).abs(),
        inequality_margin: None,
        simplicity_records: Vec::new(),
    })
}

/// [`extremal_constant`] for the final iterate of a continuation run.
pub fn extremal_from_report(report: &SolveReport, delta: f64, f: &GridFunction, op: &OperatorParams) -> Result<ExtremalResult> {
    if !report.converged {
        return Err(Error::NoConvergence {
            what: "singular solve feeding the extremal",
            iterations: report.per_n.len(),
            metric: report.residual,
        });
    }
    extremal_constant(&report.u_final, delta, f, op)
}

/// Random fields used to probe the inequality and to start multistarts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    /// Nodal Gaussians after one Jacobi averaging sweep.
    SmoothedNoise,
    /// One Gaussian bump with random centre and width.
    Bump,
}

/// Draws a random field on the interior nodes.
pub fn random_field(grid: &Grid, kind: SampleKind, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let m = grid.interior_count();
    match kind {
        SampleKind::SmoothedNoise => {
            let noise: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            (0..m)
                .map(|k| {
                    let node = grid.node_of(k);
                    let mut sum = noise[k];
                    let mut count = 1.0;
                    for axis in 0..grid.dim() {
                        for step in [-1, 1] {
                            count += 1.0;
                            if let Some(j) = grid.neighbor(node, axis, step).and_then(|v| grid.unknown_of(v)) {
                                sum += noise[j];
                            }
                        }
                    }
                    sum / count
                })
                .collect()
        }
        SampleKind::Bump => {
            let spec = grid.spec();
            let mut centre = [0.0; 2];
            let mut diam2 = 0.0;
            for (k, b) in spec.bounds.iter().enumerate() {
                centre[k] = rng.random_range(b[0]..=b[1]);
                diam2 += (b[1] - b[0]) * (b[1] - b[0]);
            }
            let width = diam2.sqrt() * rng.random_range(0.05..0.5);
            let amp: f64 = rng.sample(StandardNormal);
            (0..m)
                .map(|k| {
                    let x = grid.coords(grid.node_of(k));
                    let r2 = (x[0] - centre[0]).powi(2) + (x[1] - centre[1]).powi(2);
                    amp * (-0.5 * r2 / (width * width)).exp()
                })
                .collect()
        }
    }
}

/// Independent generator for item `index` of a seeded batch.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SobolevReport {
    pub constant: f64,
    pub samples: usize,
    pub min_margin: f64,
    /// Index of the sample attaining `min_margin`.
    pub worst: usize,
    /// Margin at `V_δ` with the full constant `μ`, when supplied.
    pub equality_margin: Option<f64>,
}

impl SobolevReport {
    pub fn all_nonnegative(&self) -> bool {
        self.min_margin >= 0.0
    }
}

/// Samples the inequality with `C = c_factor · μ`: half smoothed noise,
/// half bumps. `V_δ`, if given, is scored with `C = μ` separately.
pub fn verify_sobolev(
    mu: f64,
    delta: f64,
    f: &GridFunction,
    op: &OperatorParams,
    sample_count: usize,
    c_factor: f64,
    seed: u64,
    v_delta: Option<&GridFunction>,
) -> Result<SobolevReport> {
    require_sublinear(delta)?;
    if !(mu > 0.0) || sample_count == 0 {
        return Err(Error::param("need μ > 0 and at least one sample"));
    }
    let grid = f.grid();
    let model = EnergyModel::new(grid, *op)?;
    let fv = f.interior_values();
    let c = c_factor * mu;
    let margins: Vec<f64> = (0..sample_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let kind = if i % 2 == 0 {
                SampleKind::SmoothedNoise
            } else {
                SampleKind::Bump
            };
            let v = random_field(grid, kind, &mut rng);
            margin(&model, &v, &fv, delta, c)
        })
        .collect();
    let (worst, min_margin) = margins
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, m)| if m < acc.1 { (i, m) } else { acc });
    let equality_margin = v_delta.map(|v| margin(&model, &v.interior_values(), &fv, delta, mu));
    Ok(SobolevReport {
        constant: c,
        samples: sample_count,
        min_margin,
        worst,
        equality_margin,
    })
}

/// Minimizes the quotient from one start by descent preconditioned with the
/// seminorm Hessian, rescaling onto the constraint after every step. All
/// entries keep the sign of the start.
fn descend_quotient(
    model: &EnergyModel,
    f: &[f64],
    delta: f64,
    start: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<(Vec<f64>, usize, bool)> {
    let p = model.op().p();
    let cell = model.grid().cell_volume();
    let sign = if start.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let normalize = |z: &mut Vec<f64>| {
        let c = constraint_integral(z, f, delta, cell);
        let tau = c.powf(-1.0 / (1.0 - delta));
        z.iter_mut().for_each(|v| *v *= tau);
    };
    let floor = start.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 1e-3;
    let mut z: Vec<f64> = start.iter().map(|v| (sign * v).max(floor)).collect();
    normalize(&mut z);
    let log_q = |z: &[f64]| {
        let c = constraint_integral(z, f, delta, cell);
        model.mixed_norm_p(z).ln() - p / (1.0 - delta) * c.ln()
    };
    let mut value = log_q(&z);
    for it in 0..max_iters {
        let norm = model.mixed_norm_p(&z);
        let c = constraint_integral(&z, f, delta, cell);
        let ng = model.norm_gradient(&z);
        let src: Vec<f64> = z.iter().zip(f).map(|(v, w)| cell * w * v.powf(-delta)).collect();
        let grad: Vec<f64> = ng.iter().zip(&src).map(|(a, b)| p * (a / norm - b / c)).collect();
        // -P^{-1} grad with P = p H / ‖z‖^p
        let solve = |b: &[f64]| -> Result<Vec<f64>> {
            if p == 2.0 {
                solve_linear(model, b)
            } else {
                let kind = if p < 2.0 { Curvature::Majorizer } else { Curvature::Exact };
                let h = model.curvature(&z, kind);
                let chol = nalgebra::Cholesky::new(h)
                    .ok_or_else(|| Error::Linear("seminorm Hessian not positive definite".into()))?;
                Ok(chol
                    .solve(&nalgebra::DVector::from_column_slice(b))
                    .as_slice()
                    .to_vec())
            }
        };
        let hg = solve(&grad)?;
        let d: Vec<f64> = hg.iter().map(|v| -v * norm / p).collect();
        let slope: f64 = grad.iter().zip(&d).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            return Ok((z.iter().map(|v| sign * v).collect(), it, true));
        }
        // keep every entry strictly positive
        let mut t: f64 = 1.0;
        for (zi, di) in z.iter().zip(&d) {
            if *di < 0.0 {
                t = t.min(0.9 * zi / -di);
            }
        }
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            normalize(&mut trial);
            let tv = log_q(&trial);
            if tv <= value + 1e-4 * t * slope || (t * slope).abs() < 1e-15 {
                accepted = Some((trial, tv));
                break;
            }
            t *= 0.5;
        }
        let Some((next, nv)) = accepted else {
            return Ok((z.iter().map(|v| sign * v).collect(), it, false));
        };
        let change = next
            .iter()
            .zip(&z)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            / next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        z = next;
        value = nv;
        if change < tol {
            return Ok((z.iter().map(|v| sign * v).collect(), it + 1, true));
        }
    }
    Ok((z.iter().map(|v| sign * v).collect(), max_iters, false))
}

/// Multistart minimization of the quotient. Odd-numbered starts are
/// negated so both sign branches are exercised.
pub fn verify_simplicity(
    v_delta: &GridFunction,
    delta: f64,
    f: &GridFunction,
    op: &OperatorParams,
    starts: usize,
    seed: u64,
) -> Result<Vec<SimplicityRecord>> {
    require_sublinear(delta)?;
    if starts < 2 {
        return Err(Error::param("simplicity needs at least two starts"));
    }
    let grid = v_delta.grid();
    let model = EnergyModel::new(grid, *op)?;
    let fv = f.interior_values();
    let vx = v_delta.interior_values();
    let vsup = v_delta.sup_norm();
    if model.op().p() == 2.0 {
        // build the shared factor before fanning out
        model.linear_factor()?;
    }
    (0..starts)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, 1_000_000 + i as u64);
            let kind = if i % 4 < 2 {
                SampleKind::SmoothedNoise
            } else {
                SampleKind::Bump
            };
            let sign = if i % 2 == 1 { -1.0 } else { 1.0 };
            let start: Vec<f64> = random_field(grid, kind, &mut rng)
                .into_iter()
                .map(|v| sign * v.abs())
                .collect();
            let (w, iterations, converged) = descend_quotient(&model, &fv, delta, &start, 2000, 1e-10)?;
            let dist = |s: f64| {
                w.iter()
                    .zip(&vx)
                    .fold(0.0f64, |m, (a, b)| m.max((a - s * b).abs()))
            };
            Ok(SimplicityRecord {
                start: i,
                distance: dist(1.0).min(dist(-1.0)) / vsup,
                iterations,
                converged,
            })
        })
        .collect()
}

/// Residual of `V_δ` in `-Δ_p V + (-Δ_p)^s V = μ f V^{-δ}`.
pub fn check_euler_lagrange_extremal(
    v_delta: &GridFunction,
    mu: f64,
    delta: f64,
    f: &GridFunction,
    op: &OperatorParams,
) -> Result<f64> {
    let model = EnergyModel::new(v_delta.grid(), *op)?;
    model.weak_residual(&v_delta.interior_values(), &f.interior_values(), delta, mu)
}

/// Largest ratio `‖u_n‖^{p-1+δ} / μ^{-(1-δ)/p}` along a continuation run;
/// the inequality with constant μ keeps it at most one.
pub fn norm_bound_ratio(report: &SolveReport, mu: f64, delta: f64, p: f64) -> f64 {
    let bound = mu.powf(-(1.0 - delta) / p);
    report
        .per_n
        .iter()
        .map(|s| s.mixed_norm_p.powf((p - 1.0 + delta) / p) / bound)
        .fold(0.0, f64::max)
}
