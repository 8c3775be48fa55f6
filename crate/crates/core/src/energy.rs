//! Discrete energies on a grid and the variational functionals built from
//! them.
//!
//! Everything here works on the vector of interior unknowns; nodes outside
//! the domain are fixed at zero. The local part is a sum over gradient
//! terms, one per lattice edge in 1D and one per node and quadrant in 2D.
//! The nonlocal part is a dense pair sum for separated unknowns, an
//! analytic near-field repair for the dropped close pairs, and a per-node
//! exterior coefficient covering all pairs with one point outside the
//! domain.

use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::kernels::{
    a_kernel_smoothed, a_kernel_smoothed_slope, far_field_tail, g_trunc, g_trunc_primitive,
    g_trunc_slope, near_field_coefficient, KernelParams,
};

/// Largest number of unknowns the dense pair storage accepts.
pub const MAX_UNKNOWNS: usize = 6000;

/// Below this many unknowns row loops run on the calling thread.
const PAR_THRESHOLD: usize = 256;

/// Relative size of the smoothing used in derivatives of `|t|^p`.
const SMOOTHING: f64 = 1e-10;

/// Exponents plus the weights of the local and nonlocal parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    pub kp: KernelParams,
    pub alpha: f64,
    pub beta: f64,
}

impl OperatorParams {
    pub fn new(kp: KernelParams, alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if v != 0.0 && v != 1.0 {
                return Err(Error::param(format!("{name} must be 0 or 1, got {v}")));
            }
        }
        if alpha + beta < 1.0 {
            return Err(Error::param("at least one of alpha, beta must be 1"));
        }
        Ok(OperatorParams { kp, alpha, beta })
    }

    /// Both parts switched on.
    pub fn mixed(kp: KernelParams) -> Self {
        OperatorParams {
            kp,
            alpha: 1.0,
            beta: 1.0,
        }
    }

    pub fn p(&self) -> f64 {
        self.kp.p
    }
}

/// Value of a functional split into its parts; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub local: f64,
    pub nonlocal: f64,
    pub source: f64,
    pub total: f64,
}

/// Which second-order model of the seminorm to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curvature {
    Exact,
    Majorizer,
}

/// One gradient sample: `g = sum_k coef_k x[unknown_k]`, weighted by `w`.
#[derive(Debug, Clone)]
struct GradTerm {
    weight: f64,
    len: usize,
    unknowns: [usize; 3],
    coefs: [[f64; 2]; 3],
}

impl GradTerm {
    fn gradient(&self, x: &[f64], dim: usize) -> [f64; 2] {
        let mut g = [0.0; 2];
        for k in 0..self.len {
            let v = x[self.unknowns[k]];
            for d in 0..dim {
                g[d] += self.coefs[k][d] * v;
            }
        }
        g
    }
}

/// Precomputed discretization of the seminorms for one grid and operator.
#[derive(Debug)]
pub struct EnergyModel {
    grid: Arc<Grid>,
    op: OperatorParams,
    terms: Vec<GradTerm>,
    /// Multiplier turning the gradient sum into the near-field correction.
    c_near: f64,
    /// Pair weight by absolute index offset, already scaled by `2 h^{2N}`.
    offset_weight: Vec<f64>,
    index: Vec<[usize; 2]>,
    /// `2 h^N kappa_i` for each unknown.
    exterior: Vec<f64>,
    factor: OnceLock<std::result::Result<Cholesky<f64, Dyn>, String>>,
}

impl EnergyModel {
    pub fn new(grid: &Arc<Grid>, op: OperatorParams) -> Result<Self> {
        if op.kp.dim != grid.dim() {
            return Err(Error::param(format!(
                "operator dimension {} does not match grid dimension {}",
                op.kp.dim,
                grid.dim()
            )));
        }
        let m = grid.interior_count();
        if m > MAX_UNKNOWNS {
            return Err(Error::param(format!(
                "{m} unknowns exceed the dense limit of {MAX_UNKNOWNS}"
            )));
        }
        let terms = gradient_terms(grid);
        let h = grid.spacing();
        let dim = grid.dim();
        let radius = near_field_radius(h, dim);
        let c_near = near_field_coefficient(radius, &op.kp);

        let n = grid.nodes_per_axis();
        let order = dim as f64 + op.kp.ps();
        let hn = h.powi(dim as i32);
        let span_y = if dim == 2 { n } else { 1 };
        let mut offset_weight = vec![0.0; n * span_y];
        for dj in 0..span_y {
            for di in 0..n {
                let r2 = (di * di + dj * dj) as f64;
                if r2 >= 2.25 {
                    offset_weight[di + n * dj] = 2.0 * hn * hn * (h * r2.sqrt()).powf(-order);
                }
            }
        }
        let index: Vec<[usize; 2]> = (0..m).map(|k| grid.axis_index(grid.node_of(k))).collect();

        let collar = grid.collar_radius();
        let lattice_sum = far_lattice_sum(h, collar, dim, order);
        let tail = far_field_tail(collar, 1.0, &op.kp);
        let mut model = EnergyModel {
            grid: Arc::clone(grid),
            op,
            terms,
            c_near,
            offset_weight,
            index,
            exterior: Vec::new(),
            factor: OnceLock::new(),
        };
        let inner: Vec<f64> = model.rows(|i| {
            (0..m)
                .filter(|&j| j != i)
                .map(|j| model.pair_weight(i, j))
                .sum::<f64>()
        });
        // inner pair weights carry 2 h^{2N}; kappa wants plain lattice sums
        model.exterior = inner
            .iter()
            .map(|w_in| {
                let kappa = hn * (lattice_sum - w_in / (2.0 * hn * hn)) + tail;
                2.0 * hn * kappa.max(0.0)
            })
            .collect();
        Ok(model)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn op(&self) -> &OperatorParams {
        &self.op
    }

    pub fn unknowns(&self) -> usize {
        self.index.len()
    }

    /// Near-field multiplier: nonlocal energy gains `c_near * local`.
    pub fn near_field_multiplier(&self) -> f64 {
        self.c_near
    }

    fn pair_weight(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.index[i], self.index[j]);
        let di = a[0].abs_diff(b[0]);
        let dj = a[1].abs_diff(b[1]);
        self.offset_weight[di + self.grid.nodes_per_axis() * dj]
    }

    /// Evaluates `f` for every row, in parallel for larger grids. Results
    /// come back in row order so reductions stay deterministic.
    fn rows<T: Send>(&self, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        let m = self.unknowns();
        if m < PAR_THRESHOLD {
            (0..m).map(f).collect()
        } else {
            (0..m).into_par_iter().map(f).collect()
        }
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.unknowns() {
            return Err(Error::Length {
                expected: self.unknowns(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `sum_terms w |g|^p`, the discrete `∫|∇u|^p`.
    pub fn local_energy(&self, x: &[f64]) -> f64 {
        let p = self.op.p();
        let dim = self.grid.dim();
        self.terms
            .iter()
            .map(|t| {
                let g = t.gradient(x, dim);
                t.weight * (g[0] * g[0] + g[1] * g[1]).powf(0.5 * p)
            })
            .sum()
    }

    /// Separated interior pairs, counted over ordered pairs.
    pub fn pair_energy(&self, x: &[f64]) -> f64 {
        let p = self.op.p();
        self.rows(|i| {
            ((i + 1)..x.len())
                .map(|j| self.pair_weight(i, j) * (x[i] - x[j]).abs().powf(p))
                .sum::<f64>()
        })
        .into_iter()
        .sum()
    }

    /// Pairs with one point outside the domain.
    pub fn exterior_energy(&self, x: &[f64]) -> f64 {
        let p = self.op.p();
        x.iter()
            .zip(&self.exterior)
            .map(|(v, e)| e * v.abs().powf(p))
            .sum()
    }

    /// The discrete Gagliardo energy `∬|u(x)-u(y)|^p dμ`.
    pub fn nonlocal_energy(&self, x: &[f64]) -> f64 {
        self.c_near * self.local_energy(x) + self.pair_energy(x) + self.exterior_energy(x)
    }

    /// `alpha * local + beta * nonlocal`, the p-th power of the mixed norm.
    pub fn mixed_norm_p(&self, x: &[f64]) -> f64 {
        let local = self.local_energy(x);
        let mut total = (self.op.alpha + self.op.beta * self.c_near) * local;
        if self.op.beta != 0.0 {
            total += self.pair_energy(x) + self.exterior_energy(x);
        }
        total
    }

    fn smoothing(x: &[f64]) -> f64 {
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        SMOOTHING * scale.max(1e-12)
    }

    /// Gradient of `(1/p) mixed_norm_p`.
    pub fn norm_gradient(&self, x: &[f64]) -> Vec<f64> {
        let p = self.op.p();
        let dim = self.grid.dim();
        let eps = Self::smoothing(x);
        let eps_g = eps / self.grid.spacing();
        let local_w = self.op.alpha + self.op.beta * self.c_near;
        let mut out = vec![0.0; x.len()];
        for t in &self.terms {
            let g = t.gradient(x, dim);
            let r2 = g[0] * g[0] + g[1] * g[1];
            let phi = if p == 2.0 {
                1.0
            } else {
                (r2 + eps_g * eps_g).powf(0.5 * (p - 2.0))
            };
            let s = local_w * t.weight * phi;
            for k in 0..t.len {
                let c = t.coefs[k];
                out[t.unknowns[k]] += s * (g[0] * c[0] + g[1] * c[1]);
            }
        }
        if self.op.beta != 0.0 {
            let beta = self.op.beta;
            let pairs = self.rows(|i| {
                let mut acc = self.exterior[i] * a_kernel_smoothed(x[i], p, eps);
                for j in 0..x.len() {
                    if j != i {
                        acc += self.pair_weight(i, j) * a_kernel_smoothed(x[i] - x[j], p, eps);
                    }
                }
                acc
            });
            for (o, acc) in out.iter_mut().zip(pairs) {
                *o += beta * acc;
            }
        }
        out
    }

    /// Hessian of `(1/p) mixed_norm_p` with the same smoothing as the
    /// gradient.
    pub fn norm_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.curvature(x, Curvature::Exact)
    }

    /// Exact Hessian, or the Hessian of the quadratic majorizer of every
    /// `|t|^p` term at `x` (which drops the `(p - 2)` rank-one parts and the
    /// factor `p - 1`; it dominates the exact one when `p < 2`).
    pub fn curvature(&self, x: &[f64], kind: Curvature) -> DMatrix<f64> {
        let exact = kind == Curvature::Exact;
        let p = self.op.p();
        let dim = self.grid.dim();
        let m = x.len();
        let eps = Self::smoothing(x);
        let eps_g = eps / self.grid.spacing();
        let local_w = self.op.alpha + self.op.beta * self.c_near;
        let mut hess = DMatrix::<f64>::zeros(m, m);
        for t in &self.terms {
            let g = t.gradient(x, dim);
            let r2 = g[0] * g[0] + g[1] * g[1] + eps_g * eps_g;
            let (phi, psi) = if p == 2.0 {
                (1.0, 0.0)
            } else if exact {
                (r2.powf(0.5 * (p - 2.0)), (p - 2.0) * r2.powf(0.5 * (p - 4.0)))
            } else {
                (r2.powf(0.5 * (p - 2.0)), 0.0)
            };
            let s = local_w * t.weight;
            for a in 0..t.len {
                let ca = t.coefs[a];
                let ga = g[0] * ca[0] + g[1] * ca[1];
                for b in 0..t.len {
                    let cb = t.coefs[b];
                    let gb = g[0] * cb[0] + g[1] * cb[1];
                    let dot = ca[0] * cb[0] + ca[1] * cb[1];
                    hess[(t.unknowns[a], t.unknowns[b])] += s * (phi * dot + psi * ga * gb);
                }
            }
        }
        if self.op.beta != 0.0 {
            let beta = self.op.beta;
            let slope = |t: f64| {
                if exact {
                    a_kernel_smoothed_slope(t, p, eps)
                } else {
                    (t * t + eps * eps).powf(0.5 * (p - 2.0))
                }
            };
            let rows = self.rows(|i| {
                let mut row = vec![0.0; m];
                let mut diag = self.exterior[i] * slope(x[i]);
                for j in 0..m {
                    if j != i {
                        let w = self.pair_weight(i, j);
                        if w != 0.0 {
                            let c = w * slope(x[i] - x[j]);
                            row[j] = -c;
                            diag += c;
                        }
                    }
                }
                row[i] = diag;
                row
            });
            for (i, row) in rows.into_iter().enumerate() {
                for (j, v) in row.into_iter().enumerate() {
                    hess[(i, j)] += beta * v;
                }
            }
        }
        hess
    }

    /// Cholesky factor of the (constant) Hessian when `p = 2`.
    pub fn linear_factor(&self) -> Result<&Cholesky<f64, Dyn>> {
        if self.op.p() != 2.0 {
            return Err(Error::param("a constant Hessian exists only for p = 2"));
        }
        self.factor
            .get_or_init(|| {
                let zero = vec![0.0; self.unknowns()];
                Cholesky::new(self.norm_hessian(&zero))
                    .ok_or_else(|| "stiffness matrix is not positive definite".to_string())
            })
            .as_ref()
            .map_err(|e| Error::Linear(e.clone()))
    }

    /// Nodal quadrature `h^N sum_i f_i s(x_i)`.
    pub fn integrate(&self, values: impl Iterator<Item = f64>) -> f64 {
        self.grid.cell_volume() * values.sum::<f64>()
    }

    /// Value, gradient and Hessian of `(1/p)‖x‖^p - h^N sum f_i S(x_i)`.
    pub fn objective<'a>(&'a self, source: Source<'a>) -> Objective<'a> {
        Objective {
            model: self,
            source,
        }
    }

    /// Maximum defect of the singular Euler–Lagrange system
    /// `∂(1/p)‖u‖^p = h^N c f u^{-δ}`, normalized by the largest right-hand
    /// side on the tested nodes. For `δ >= 1` nodes within two cells of the
    /// boundary are left out.
    pub fn weak_residual(&self, x: &[f64], f: &[f64], delta: f64, c: f64) -> Result<f64> {
        self.check_len(x)?;
        self.check_len(f)?;
        if let Some((node, &value)) = x.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::NotPositive { node, value });
        }
        let lhs = self.norm_gradient(x);
        let hn = self.grid.cell_volume();
        let keep = |k: usize| delta < 1.0 || self.grid.depth(self.grid.node_of(k)) > 2;
        let mut defect = 0.0f64;
        let mut scale = 0.0f64;
        for k in (0..x.len()).filter(|&k| keep(k)) {
            let rhs = hn * c * f[k] * x[k].powf(-delta);
            defect = defect.max((lhs[k] - rhs).abs());
            scale = scale.max(rhs.abs());
        }
        if scale == 0.0 {
            return Ok(defect);
        }
        Ok(defect / scale)
    }
}

fn near_field_radius(h: f64, dim: usize) -> f64 {
    if dim == 1 {
        1.5 * h
    } else {
        // disk with the area of the nine excluded lattice offsets
        3.0 * h / std::f64::consts::PI.sqrt()
    }
}

/// `sum |z|^{-order}` over nonzero lattice offsets with `1.5h <= |z| <= R`.
fn far_lattice_sum(h: f64, radius: f64, dim: usize, order: f64) -> f64 {
    let cells = (radius / h * (1.0 + 1e-12)).floor() as i64;
    let limit = (radius / h) * (radius / h) * (1.0 + 1e-12);
    let mut total = 0.0;
    if dim == 1 {
        for i in 2..=cells {
            total += 2.0 * (h * i as f64).powf(-order);
        }
        return total;
    }
    for j in 0..=cells {
        let mut row = 0.0;
        for i in 0..=cells {
            let r2 = (i * i + j * j) as f64;
            if r2 < 2.25 || r2 > limit {
                continue;
            }
            // count the symmetric copies of (i, j)
            let copies = match (i == 0, j == 0) {
                (true, true) => 0.0,
                (true, false) | (false, true) => 2.0,
                (false, false) => 4.0,
            };
            row += copies * (h * r2.sqrt()).powf(-order);
        }
        total += row;
    }
    total
}

fn gradient_terms(grid: &Grid) -> Vec<GradTerm> {
    let h = grid.spacing();
    let n = grid.nodes_per_axis();
    let mut terms = Vec::new();
    if grid.dim() == 1 {
        for i in 0..n - 1 {
            let mut t = GradTerm {
                weight: h,
                len: 0,
                unknowns: [0; 3],
                coefs: [[0.0; 2]; 3],
            };
            for (node, c) in [(i, -1.0 / h), (i + 1, 1.0 / h)] {
                if let Some(k) = grid.unknown_of(node) {
                    t.unknowns[t.len] = k;
                    t.coefs[t.len] = [c, 0.0];
                    t.len += 1;
                }
            }
            if t.len > 0 {
                terms.push(t);
            }
        }
        return terms;
    }
    for node in 0..grid.node_count() {
        for sx in [-1isize, 1] {
            for sy in [-1isize, 1] {
                let (fx, fy) = (sx as f64 / h, sy as f64 / h);
                let mut t = GradTerm {
                    weight: 0.25 * h * h,
                    len: 0,
                    unknowns: [0; 3],
                    coefs: [[0.0; 2]; 3],
                };
                let stencil = [
                    (Some(node), [-fx, -fy]),
                    (grid.neighbor(node, 0, sx), [fx, 0.0]),
                    (grid.neighbor(node, 1, sy), [0.0, fy]),
                ];
                for (nb, c) in stencil {
                    if let Some(k) = nb.and_then(|v| grid.unknown_of(v)) {
                        t.unknowns[t.len] = k;
                        t.coefs[t.len] = c;
                        t.len += 1;
                    }
                }
                if t.len > 0 {
                    terms.push(t);
                }
            }
        }
    }
    terms
}

/// The scalar source part of a functional, `-h^N sum_i w_i S(x_i)`.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    /// `S(t) = t` with weights `g`: the auxiliary functional `J`.
    Linear { g: &'a [f64] },
    /// `S' = (t⁺ + 1/n)^{-δ}`, weights `min(f, n)`; convex for every `δ > 0`.
    Regularized { f: &'a [f64], n: f64, delta: f64 },
    /// The functional `I_n` with `G_n(t) = (t⁺+1/n)^{1-δ}/(1-δ) - n^δ t⁻`.
    Approximate { f: &'a [f64], n: f64, delta: f64 },
    /// `I_δ`: `S(t) = (t⁺)^{1-δ}/(1-δ)`; differentiable only where `t > 0`.
    Singular { f: &'a [f64], delta: f64 },
    /// `J_k`: `S` is the truncated primitive `𝒢_k`.
    Truncated { f: &'a [f64], k: f64, delta: f64 },
}

impl Source<'_> {
    fn weights(&self) -> &[f64] {
        match self {
            Source::Linear { g } => g,
            Source::Regularized { f, .. }
            | Source::Approximate { f, .. }
            | Source::Singular { f, .. }
            | Source::Truncated { f, .. } => f,
        }
    }

    fn weight(&self, i: usize) -> f64 {
        let w = self.weights()[i];
        match self {
            Source::Regularized { n, .. } | Source::Approximate { n, .. } => w.min(*n),
            _ => w,
        }
    }

    /// `S`, `S'` and `S''` at `t`.
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        match *self {
            Source::Linear { .. } => (t, 1.0, 0.0),
            Source::Regularized { n, delta, .. } => {
                if t <= 0.0 {
                    return (n.powf(delta) * t, n.powf(delta), 0.0);
                }
                let shifted = t + 1.0 / n;
                let prim = if (delta - 1.0).abs() < 1e-14 {
                    (n * t).ln_1p()
                } else {
                    n.powf(delta - 1.0) * ((1.0 - delta) * (n * t).ln_1p()).exp_m1() / (1.0 - delta)
                };
                (
                    prim,
                    shifted.powf(-delta),
                    -delta * shifted.powf(-delta - 1.0),
                )
            }
            Source::Approximate { n, delta, .. } => {
                if t <= 0.0 {
                    let c = n.powf(delta - 1.0) / (1.0 - delta);
                    return (c + n.powf(delta) * t, n.powf(delta), 0.0);
                }
                let shifted = t + 1.0 / n;
                (
                    shifted.powf(1.0 - delta) / (1.0 - delta),
                    shifted.powf(-delta),
                    -delta * shifted.powf(-delta - 1.0),
                )
            }
            Source::Singular { delta, .. } => {
                if t <= 0.0 {
                    return (0.0, 0.0, 0.0);
                }
                (
                    t.powf(1.0 - delta) / (1.0 - delta),
                    t.powf(-delta),
                    -delta * t.powf(-delta - 1.0),
                )
            }
            Source::Truncated { k, delta, .. } => (
                g_trunc_primitive(t, k, delta),
                g_trunc(t, k, delta),
                g_trunc_slope(t, k, delta),
            ),
        }
    }

    fn validate(&self, len: usize) -> Result<()> {
        if self.weights().len() != len {
            return Err(Error::Length {
                expected: len,
                got: self.weights().len(),
            });
        }
        let delta = match *self {
            Source::Linear { .. } => return Ok(()),
            Source::Regularized { n, delta, .. } | Source::Approximate { n, delta, .. } => {
                if !(n >= 1.0) {
                    return Err(Error::param(format!("n must be at least 1, got {n}")));
                }
                delta
            }
            Source::Truncated { k, delta, .. } => {
                if !(k > 0.0) {
                    return Err(Error::param(format!("k must be positive, got {k}")));
                }
                delta
            }
            Source::Singular { delta, .. } => delta,
        };
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::param(format!("δ must be positive, got {delta}")));
        }
        if matches!(self, Source::Approximate { .. } | Source::Singular { .. }) && delta >= 1.0 {
            return Err(Error::param(format!(
                "this functional needs 0 < δ < 1, got {delta}"
            )));
        }
        Ok(())
    }
}

/// A functional `(1/p)‖x‖^p - h^N sum w_i S(x_i)` over the unknowns.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    model: &'a EnergyModel,
    source: Source<'a>,
}

impl<'a> Objective<'a> {
    pub fn model(&self) -> &'a EnergyModel {
        self.model
    }

    pub fn source(&self) -> &Source<'a> {
        &self.source
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate(self.model.unknowns())
    }

    pub fn breakdown(&self, x: &[f64]) -> EnergyBreakdown {
        let p = self.model.op.p();
        let op = &self.model.op;
        let local_raw = self.model.local_energy(x);
        let local = op.alpha * local_raw / p;
        let nonlocal = if op.beta != 0.0 {
            op.beta * self.model.nonlocal_energy(x) / p
        } else {
            0.0
        };
        let source = -self.source_integral(x);
        EnergyBreakdown {
            local,
            nonlocal,
            source,
            total: local + nonlocal + source,
        }
    }

    pub fn source_integral(&self, x: &[f64]) -> f64 {
        self.model.integrate(
            x.iter()
                .enumerate()
                .map(|(i, &t)| self.source.weight(i) * self.source.eval(t).0),
        )
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.model.mixed_norm_p(x) / self.model.op.p() - self.source_integral(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let hn = self.model.grid.cell_volume();
        let mut g = self.model.norm_gradient(x);
        for (i, gi) in g.iter_mut().enumerate() {
            *gi -= hn * self.source.weight(i) * self.source.eval(x[i]).1;
        }
        g
    }

    /// The source part of the gradient alone, `h^N w_i S'(x_i)`.
    pub fn source_gradient(&self, x: &[f64]) -> Vec<f64> {
        let hn = self.model.grid.cell_volume();
        (0..x.len())
            .map(|i| hn * self.source.weight(i) * self.source.eval(x[i]).1)
            .collect()
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.curvature(x, Curvature::Exact)
    }

    /// Second-order model: the seminorm part per `kind`, the source part exact.
    pub fn curvature(&self, x: &[f64], kind: Curvature) -> DMatrix<f64> {
        let hn = self.model.grid.cell_volume();
        let mut hmat = self.model.curvature(x, kind);
        for i in 0..x.len() {
            hmat[(i, i)] -= hn * self.source.weight(i) * self.source.eval(x[i]).2;
        }
        hmat
    }

    /// True when the Hessian does not depend on `x`.
    pub fn is_quadratic(&self) -> bool {
        self.model.op.p() == 2.0 && matches!(self.source, Source::Linear { .. })
    }
}

/// Solves `H y = b` with the cached factor of the `p = 2` stiffness matrix.
pub fn solve_linear(model: &EnergyModel, b: &[f64]) -> Result<Vec<f64>> {
    let chol = model.linear_factor()?;
    Ok(chol.solve(&DVector::from_column_slice(b)).as_slice().to_vec())
}

fn model_for(u: &GridFunction, op: OperatorParams) -> Result<EnergyModel> {
    EnergyModel::new(u.grid(), op)
}

fn local_op(p: f64, dim: usize) -> Result<OperatorParams> {
    // s does not enter the local part
    OperatorParams::new(KernelParams::new(p, 0.5, dim)?, 1.0, 0.0)
}

/// `∫|∇u|^p` on the grid.
pub fn local_energy(u: &GridFunction, p: f64) -> Result<f64> {
    let model = model_for(u, local_op(p, u.grid().dim())?)?;
    Ok(model.local_energy(&u.interior_values()))
}

/// `∬|u(x)-u(y)|^p |x-y|^{-N-ps}` over the whole space.
pub fn nonlocal_energy(u: &GridFunction, kp: &KernelParams) -> Result<f64> {
    let model = model_for(u, OperatorParams::mixed(*kp))?;
    Ok(model.nonlocal_energy(&u.interior_values()))
}

pub fn mixed_norm_p(u: &GridFunction, op: &OperatorParams) -> Result<f64> {
    let model = model_for(u, *op)?;
    Ok(model.mixed_norm_p(&u.interior_values()))
}

/// `(1/p)‖v‖^p - ∫ g v`.
pub fn functional_j(v: &GridFunction, g: &GridFunction, op: &OperatorParams) -> Result<EnergyBreakdown> {
    let model = model_for(v, *op)?;
    let gv = g.interior_values();
    let obj = model.objective(Source::Linear { g: &gv });
    obj.validate()?;
    Ok(obj.breakdown(&v.interior_values()))
}

pub fn functional_i_n(
    v: &GridFunction,
    n: u64,
    delta: f64,
    f: &GridFunction,
    op: &OperatorParams,
) -> Result<f64> {
    let model = model_for(v, *op)?;
    let fv = f.interior_values();
    let obj = model.objective(Source::Approximate {
        f: &fv,
        n: n as f64,
        delta,
    });
    obj.validate()?;
    Ok(obj.value(&v.interior_values()))
}

pub fn functional_i_delta(
    v: &GridFunction,
    delta: f64,
    f: &GridFunction,
    op: &OperatorParams,
) -> Result<f64> {
    let model = model_for(v, *op)?;
    let fv = f.interior_values();
    let obj = model.objective(Source::Singular { f: &fv, delta });
    obj.validate()?;
    Ok(obj.value(&v.interior_values()))
}

pub fn functional_j_k(
    phi: &GridFunction,
    k: f64,
    delta: f64,
    f: &GridFunction,
    op: &OperatorParams,
) -> Result<f64> {
    let model = model_for(phi, *op)?;
    let fv = f.interior_values();
    let obj = model.objective(Source::Truncated { f: &fv, k, delta });
    obj.validate()?;
    Ok(obj.value(&phi.interior_values()))
}

/// Gradient of a functional with respect to the interior values, placed on
/// the lattice (zero outside the domain).
pub fn energy_gradient(v: &GridFunction, objective: &Objective<'_>) -> Result<GridFunction> {
    objective.validate()?;
    let x = v.interior_values();
    objective.model().check_len(&x)?;
    GridFunction::zero_extend(v.grid(), &objective.gradient(&x))
}

/// Residual of the singular problem `-Δ_p u + (-Δ_p)^s u = f u^{-δ}`.
pub fn weak_residual(u: &GridFunction, delta: f64, f: &GridFunction, op: &OperatorParams) -> Result<f64> {
    let model = model_for(u, *op)?;
    model.weak_residual(&u.interior_values(), &f.interior_values(), delta, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn interval(n: usize) -> Arc<Grid> {
        Grid::new(DomainSpec::interval(0.0, 1.0, n)).unwrap()
    }

    fn op(p: f64, s: f64, dim: usize) -> OperatorParams {
        OperatorParams::mixed(KernelParams::new(p, s, dim).unwrap())
    }

    fn random_vec(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
        (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn hat_local_energy() {
        let g = interval(3);
        let hat = GridFunction::zero_extend(&g, &[1.0]).unwrap();
        assert_relative_eq!(local_energy(&hat, 2.0).unwrap(), 4.0, max_relative = 1e-14);
        assert_relative_eq!(local_energy(&hat, 3.0).unwrap(), 8.0, max_relative = 1e-14);
    }

    #[test]
    fn zero_function_has_zero_energies() {
        for g in [interval(9), Grid::new(DomainSpec::disk(1.0, 9)).unwrap()] {
            let z = GridFunction::zeros(&g);
            let o = op(1.7, 0.4, g.dim());
            assert_eq!(local_energy(&z, 1.7).unwrap(), 0.0);
            assert_eq!(nonlocal_energy(&z, &o.kp).unwrap(), 0.0);
            assert_eq!(mixed_norm_p(&z, &o).unwrap(), 0.0);
            let br = functional_j(&z, &z, &o).unwrap();
            assert_eq!(br.total, 0.0);
        }
    }

    #[test]
    fn beta_off_is_local() {
        let g = interval(11);
        let u = GridFunction::from_fn(&g, |x| x[0].sin()).unwrap();
        let kp = KernelParams::new(2.5, 0.3, 1).unwrap();
        let local_only = OperatorParams::new(kp, 1.0, 0.0).unwrap();
        assert_eq!(
            mixed_norm_p(&u, &local_only).unwrap(),
            local_energy(&u, 2.5).unwrap()
        );
    }

    #[test]
    fn operator_toggles_validated() {
        let kp = KernelParams::new(2.0, 0.5, 1).unwrap();
        assert!(OperatorParams::new(kp, 0.0, 0.0).is_err());
        assert!(OperatorParams::new(kp, 0.5, 1.0).is_err());
    }

    #[test]
    fn edge_sum_matches_quadrant_sum_for_p2() {
        // quadrant terms reproduce the edge sum exactly when p = 2
        let g = Grid::new(DomainSpec::disk(1.0, 13)).unwrap();
        let model = EnergyModel::new(&g, op(2.0, 0.5, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_vec(&mut rng, model.unknowns());
        let u = GridFunction::zero_extend(&g, &x).unwrap();
        let h = g.spacing();
        let mut edges = 0.0;
        for node in 0..g.node_count() {
            for axis in 0..2 {
                if let Some(nb) = g.neighbor(node, axis, 1) {
                    let d = (u.values()[nb] - u.values()[node]) / h;
                    edges += h * h * d * d;
                }
            }
        }
        assert_relative_eq!(model.local_energy(&x), edges, max_relative = 1e-12);
    }

    #[test]
    fn energies_are_p_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (g, p) in [(interval(17), 1.5), (Grid::new(DomainSpec::disk(1.0, 11)).unwrap(), 3.0)] {
            let model = EnergyModel::new(&g, op(p, 0.35, g.dim())).unwrap();
            let x = random_vec(&mut rng, model.unknowns());
            for lambda in [0.3, -2.0, 7.5] {
                let y: Vec<f64> = x.iter().map(|v| lambda * v).collect();
                let scale = f64::abs(lambda).powf(p);
                assert_relative_eq!(
                    model.mixed_norm_p(&y),
                    scale * model.mixed_norm_p(&x),
                    max_relative = 1e-12
                );
                assert_relative_eq!(
                    model.pair_energy(&y),
                    scale * model.pair_energy(&x),
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn reflection_preserves_nonlocal_energy() {
        let g = interval(15);
        let kp = KernelParams::new(2.2, 0.6, 1).unwrap();
        let u = GridFunction::from_fn(&g, |x| (3.0 * x[0]).sin() + x[0] * x[0]).unwrap();
        let a = nonlocal_energy(&u, &kp).unwrap();
        let b = nonlocal_energy(&u.reflect(0).unwrap(), &kp).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-13);
    }

    #[test]
    fn breakdown_sums_to_total() {
        let g = interval(21);
        let o = op(1.8, 0.4, 1);
        let v = GridFunction::from_fn(&g, |x| x[0] * (1.0 - x[0])).unwrap();
        let gfun = GridFunction::from_fn(&g, |x| 1.0 + x[0]).unwrap();
        let br = functional_j(&v, &gfun, &o).unwrap();
        assert_relative_eq!(br.total, br.local + br.nonlocal + br.source, max_relative = 1e-15);
        let zero = GridFunction::zeros(&g);
        let br0 = functional_j(&v, &zero, &o).unwrap();
        assert_relative_eq!(br0.total, mixed_norm_p(&v, &o).unwrap() / 1.8, max_relative = 1e-14);
    }

    #[test]
    fn i_n_at_zero_is_minus_twice_measure() {
        let g = interval(41);
        let o = op(2.0, 0.5, 1);
        let z = GridFunction::zeros(&g);
        let one = GridFunction::from_fn(&g, |_| 1.0).unwrap();
        let val = functional_i_n(&z, 1, 0.5, &one, &o).unwrap();
        let measure = g.cell_volume() * g.interior_count() as f64;
        assert_relative_eq!(val, -2.0 * measure, max_relative = 1e-14);
        assert!(functional_i_n(&z, 1, 1.0, &one, &o).is_err());
        assert!(functional_i_delta(&z, 1.5, &one, &o).is_err());
    }

    #[test]
    fn zero_source_functionals_reduce_to_norm() {
        let g = interval(13);
        let o = op(2.6, 0.5, 1);
        let v = GridFunction::from_fn(&g, |x| (x[0] - 0.3).abs() - 0.2).unwrap();
        let zero = GridFunction::zeros(&g);
        let norm = mixed_norm_p(&v, &o).unwrap() / 2.6;
        assert_relative_eq!(functional_i_n(&v, 3, 0.4, &zero, &o).unwrap(), norm, max_relative = 1e-14);
        assert_relative_eq!(functional_i_delta(&v, 0.4, &zero, &o).unwrap(), norm, max_relative = 1e-14);
        assert_relative_eq!(functional_j_k(&v, 5.0, 2.0, &zero, &o).unwrap(), norm, max_relative = 1e-14);
        assert_eq!(functional_i_delta(&zero, 0.4, &zero, &o).unwrap(), 0.0);
        let one = GridFunction::from_fn(&g, |_| 1.0).unwrap();
        assert_eq!(functional_j_k(&zero, 5.0, 2.0, &one, &o).unwrap(), 0.0);
    }

    #[test]
    fn i_n_prefers_positive_part() {
        let g = interval(25);
        let o = op(2.0, 0.5, 1);
        let f = GridFunction::from_fn(&g, |_| 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = random_vec(&mut rng, g.interior_count());
            let v = GridFunction::zero_extend(&g, &x).unwrap();
            let vp = v.map_interior(|t| t.max(0.0)).unwrap();
            let n = rng.random_range(1..64);
            assert!(
                functional_i_n(&v, n, 0.5, &f, &o).unwrap()
                    >= functional_i_n(&vp, n, 0.5, &f, &o).unwrap() - 1e-12
            );
        }
    }

    fn central_difference_check(obj: &Objective<'_>, x: &[f64], rng: &mut ChaCha8Rng) {
        let grad = obj.gradient(x);
        for _ in 0..50 {
            let psi = random_vec(rng, x.len());
            let t = 1e-6;
            let plus: Vec<f64> = x.iter().zip(&psi).map(|(a, b)| a + t * b).collect();
            let minus: Vec<f64> = x.iter().zip(&psi).map(|(a, b)| a - t * b).collect();
            let fd = (obj.value(&plus) - obj.value(&minus)) / (2.0 * t);
            let an: f64 = grad.iter().zip(&psi).map(|(a, b)| a * b).sum();
            let scale: f64 = grad.iter().zip(&psi).map(|(a, b)| (a * b).abs()).sum();
            assert!(
                (fd - an).abs() <= 1e-5 * scale.max(an.abs()),
                "fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (g, p) in [
            (interval(21), 1.5),
            (interval(21), 3.0),
            (Grid::new(DomainSpec::disk(1.0, 9)).unwrap(), 2.4),
        ] {
            let model = EnergyModel::new(&g, op(p, 0.45, g.dim())).unwrap();
            let m = model.unknowns();
            let x: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.5)).collect();
            let f: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
            for src in [
                Source::Linear { g: &f },
                Source::Regularized { f: &f, n: 4.0, delta: 1.5 },
                Source::Approximate { f: &f, n: 8.0, delta: 0.5 },
                Source::Singular { f: &f, delta: 0.3 },
                Source::Truncated { f: &f, k: 2.0, delta: 1.0 },
            ] {
                central_difference_check(&model.objective(src), &x, &mut rng);
            }
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for (g, p) in [(interval(15), 1.6), (Grid::new(DomainSpec::disk(1.0, 9)).unwrap(), 2.8)] {
            let model = EnergyModel::new(&g, op(p, 0.5, g.dim())).unwrap();
            let m = model.unknowns();
            let x: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
            let f = vec![1.0; m];
            let obj = model.objective(Source::Regularized { f: &f, n: 3.0, delta: 0.7 });
            let hmat = obj.hessian(&x);
            let psi = random_vec(&mut rng, m);
            let t = 1e-6;
            let gp = obj.gradient(&x.iter().zip(&psi).map(|(a, b)| a + t * b).collect::<Vec<_>>());
            let gm = obj.gradient(&x.iter().zip(&psi).map(|(a, b)| a - t * b).collect::<Vec<_>>());
            let hv = &hmat * DVector::from_column_slice(&psi);
            for i in 0..m {
                let fd = (gp[i] - gm[i]) / (2.0 * t);
                assert!((fd - hv[i]).abs() <= 1e-5 * hv.amax(), "row {i}: {fd} vs {}", hv[i]);
            }
        }
    }

    #[test]
    fn local_gradient_is_stencil_local() {
        let g = interval(21);
        let kp = KernelParams::new(2.0, 0.5, 1).unwrap();
        let model = EnergyModel::new(&g, OperatorParams::new(kp, 1.0, 0.0).unwrap()).unwrap();
        let mut x = vec![0.0; model.unknowns()];
        x[0] = 1.0;
        let grad = model.norm_gradient(&x);
        assert!(grad[0] != 0.0 && grad[1] != 0.0);
        assert!(grad[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn strict_midpoint_convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g = interval(17);
        let model = EnergyModel::new(&g, op(2.5, 0.5, 1)).unwrap();
        for _ in 0..100 {
            let a = random_vec(&mut rng, model.unknowns());
            let b = random_vec(&mut rng, model.unknowns());
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let fa = model.mixed_norm_p(&a) / 2.5;
            let fb = model.mixed_norm_p(&b) / 2.5;
            let fm = model.mixed_norm_p(&mid) / 2.5;
            assert!(fm < 0.5 * (fa + fb) - 1e-14 * (fa + fb));
        }
    }

    #[test]
    fn norm_equivalence_constant_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let g = interval(33);
        let model = EnergyModel::new(&g, op(2.0, 0.5, 1)).unwrap();
        let mut batch = || {
            (0..100)
                .map(|_| {
                    let x = random_vec(&mut rng, model.unknowns());
                    let local = model.local_energy(&x);
                    let mixed = model.mixed_norm_p(&x);
                    assert!(local <= mixed);
                    mixed / local - 1.0
                })
                .fold(0.0, f64::max)
        };
        let c1 = batch();
        let c2 = batch();
        assert!(c1 > 0.0);
        assert!((c1 - c2).abs() <= 0.05 * c1.max(c2), "{c1} vs {c2}");
    }

    #[test]
    fn weak_residual_requires_positive_values() {
        let g = interval(11);
        let o = op(2.0, 0.5, 1);
        let f = GridFunction::from_fn(&g, |_| 1.0).unwrap();
        let mut x = vec![0.1; g.interior_count()];
        x[4] = 0.0;
        let u = GridFunction::zero_extend(&g, &x).unwrap();
        assert!(matches!(
            weak_residual(&u, 0.5, &f, &o),
            Err(Error::NotPositive { node: 4, .. })
        ));
    }

    #[test]
    fn size_limit_rejected() {
        let spec = DomainSpec {
            shape: crate::grid::Shape::Rectangle,
            bounds: vec![[0.0, 1.0], [0.0, 1.0]],
            nodes_per_axis: 81,
            collar: 1.5,
        };
        let g = Grid::new(spec).unwrap();
        assert!(g.interior_count() > MAX_UNKNOWNS);
        assert!(EnergyModel::new(&g, op(2.0, 0.5, 2)).is_err());
    }

    // Continuum Gagliardo energy of the piecewise linear interpolant on (0,1),
    // computed by Gauss quadrature on the exact breakpoints.
    fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
        (1..=n)
            .map(|i| {
                let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
                loop {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=n {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-15 {
                        let w = 2.0 / ((1.0 - x * x) * dp * dp);
                        return (x, w);
                    }
                }
            })
            .collect()
    }

    fn continuum_gagliardo(values: &[f64], p: f64, s: f64) -> f64 {
        let m = values.len() + 1;
        let h = 1.0 / m as f64;
        let mut nodes = vec![0.0];
        nodes.extend_from_slice(values);
        nodes.push(0.0);
        let u = |x: f64| {
            if !(0.0..=1.0).contains(&x) {
                return 0.0;
            }
            let k = ((x / h) as usize).min(m - 1);
            let t = x / h - k as f64;
            nodes[k] * (1.0 - t) + nodes[k + 1] * t
        };
        let gl = gauss_legendre(24);
        let integrate = |a: f64, b: f64, f: &dyn Fn(f64) -> f64| {
            let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
            gl.iter().map(|(x, w)| w * r * f(c + r * x)).sum::<f64>()
        };
        // inner part: 2 ∫_0^1 dz z^{-1-ps} ∫_0^{1-z} |u(x+z)-u(x)|^p dx
        let inner_at = |z: f64| {
            let mut cuts: Vec<f64> = (0..=m)
                .flat_map(|k| [k as f64 * h, k as f64 * h - z])
                .filter(|&c| c > 0.0 && c < 1.0 - z)
                .collect();
            cuts.push(0.0);
            cuts.push(1.0 - z);
            cuts.sort_by(f64::total_cmp);
            cuts.windows(2)
                .map(|w| integrate(w[0], w[1], &|x| (u(x + z) - u(x)).abs().powf(p)))
                .sum::<f64>()
                * z.powf(-1.0 - p * s)
        };
        let mut inner = 0.0;
        for k in 0..m {
            let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
            // split each z-cell geometrically toward zero to tame the endpoint
            let mut lo = a;
            if k == 0 {
                let mut pieces = vec![b];
                let mut c = b;
                for _ in 0..30 {
                    c *= 0.5;
                    pieces.push(c);
                }
                pieces.push(0.0);
                for w in pieces.windows(2) {
                    inner += integrate(w[1], w[0], &inner_at);
                }
                continue;
            }
            for j in 1..=4 {
                let hi = a + (b - a) * j as f64 / 4.0;
                inner += integrate(lo, hi, &inner_at);
                lo = hi;
            }
        }
        let ps = p * s;
        let kappa = |x: f64| (x.powf(-ps) + (1.0 - x).powf(-ps)) / ps;
        let mut outer = 0.0;
        for k in 0..m {
            let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
            outer += integrate(a, b, &|x| u(x).abs().powf(p) * kappa(x));
        }
        2.0 * inner + 2.0 * outer
    }

    fn quadrature_ratio(nodes: usize) -> f64 {
        let g = interval(nodes);
        let kp = KernelParams::new(2.0, 0.5, 1).unwrap();
        let u = GridFunction::from_fn(&g, |x| 4.0 * x[0] * (1.0 - x[0])).unwrap();
        let discrete = nonlocal_energy(&u, &kp).unwrap();
        let oracle = continuum_gagliardo(&u.interior_values(), 2.0, 0.5);
        discrete / oracle
    }

    #[test]
    fn nonlocal_energy_tracks_dense_quadrature() {
        // first-order scheme: coarse grids are only roughly right
        let coarse = quadrature_ratio(5);
        assert!((coarse - 1.0).abs() < 0.25, "ratio {coarse}");
        let fine = quadrature_ratio(33);
        assert!((fine - 1.0).abs() < 0.02, "ratio {fine}");
        assert!((fine - 1.0).abs() < (coarse - 1.0).abs());
    }

    proptest! {
        #[test]
        fn pair_weights_symmetric(i in 0usize..9, j in 0usize..9) {
            let g = interval(11);
            let model = EnergyModel::new(&g, op(2.0, 0.5, 1)).unwrap();
            prop_assert_eq!(model.pair_weight(i, j), model.pair_weight(j, i));
        }

        #[test]
        fn mixed_norm_nonnegative(x in proptest::collection::vec(-5.0f64..5.0, 9)) {
            let g = interval(11);
            let model = EnergyModel::new(&g, op(1.7, 0.3, 1)).unwrap();
            let e = model.mixed_norm_p(&x);
            prop_assert!(e >= 0.0);
            prop_assert_eq!(e == 0.0, x.iter().all(|&v| v == 0.0));
        }
    }
}
