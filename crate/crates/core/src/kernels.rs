//! Pointwise kernels of the mixed operator: the monotone power map, the
//! singular pair weight, truncations, quadrature repairs for the diagonal
//! singularity and the exterior tail, and randomized inequality oracles.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponents of the operator on an `dim`-dimensional grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub p: f64,
    pub s: f64,
    pub dim: usize,
}

impl KernelParams {
    pub fn new(p: f64, s: f64, dim: usize) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::param(format!("p must be > 1, got {p}")));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::param(format!("s must lie in (0, 1), got {s}")));
        }
        if !(dim == 1 || dim == 2) {
            return Err(Error::param(format!("dimension must be 1 or 2, got {dim}")));
        }
        Ok(KernelParams { p, s, dim })
    }

    /// `p * s`, the order of the kernel singularity beyond the dimension.
    pub fn ps(&self) -> f64 {
        self.p * self.s
    }
}

/// `|t|^{p-2} t`, zero at the origin for every `p > 1`.
pub fn a_kernel(t: f64, p: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t.abs().powf(p - 1.0).copysign(t)
    }
}

/// `(t^2 + eps^2)^{(p-2)/2} t`, the smoothed form used in gradients.
pub fn a_kernel_smoothed(t: f64, p: f64, eps: f64) -> f64 {
    if p == 2.0 {
        return t;
    }
    (t * t + eps * eps).powf(0.5 * (p - 2.0)) * t
}

/// Derivative of [`a_kernel_smoothed`] in `t`.
pub fn a_kernel_smoothed_slope(t: f64, p: f64, eps: f64) -> f64 {
    if p == 2.0 {
        return 1.0;
    }
    let r2 = t * t + eps * eps;
    ((p - 1.0) * t * t + eps * eps) * r2.powf(0.5 * (p - 4.0))
}

/// Pair weight `|x - y|^{-(N + ps)}`.
pub fn kernel_weight(x: &[f64], y: &[f64], kp: &KernelParams) -> Result<f64> {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if d2 == 0.0 {
        return Err(Error::SingularDiagonal);
    }
    Ok(d2.sqrt().powf(-(kp.dim as f64 + kp.ps())))
}

/// Symmetric clamp to `[-level, level]`.
pub fn truncate(t: f64, level: f64) -> f64 {
    debug_assert!(level > 0.0);
    t.clamp(-level, level)
}

/// `min{l^{-delta}, k}` for `l > 0`, and `k` otherwise.
pub fn g_trunc(l: f64, k: f64, delta: f64) -> f64 {
    if l <= 0.0 {
        k
    } else {
        l.powf(-delta).min(k)
    }
}

/// Point where `l^{-delta}` drops below `k`.
fn g_trunc_knee(k: f64, delta: f64) -> f64 {
    k.powf(-1.0 / delta)
}

/// Primitive of [`g_trunc`] normalized to vanish at zero.
pub fn g_trunc_primitive(l: f64, k: f64, delta: f64) -> f64 {
    let knee = g_trunc_knee(k, delta);
    if l <= knee {
        return k * l;
    }
    let tail = if (delta - 1.0).abs() < 1e-12 {
        (l / knee).ln()
    } else {
        (l.powf(1.0 - delta) - knee.powf(1.0 - delta)) / (1.0 - delta)
    };
    k * knee + tail
}

/// Derivative of [`g_trunc`] (zero on the flat part).
pub fn g_trunc_slope(l: f64, k: f64, delta: f64) -> f64 {
    if l <= g_trunc_knee(k, delta) {
        0.0
    } else {
        -delta * l.powf(-delta - 1.0)
    }
}

/// `∫_0^{2π} |cos θ|^p dθ`, by double-exponential quadrature on a quarter
/// period.
pub fn angular_moment(p: f64) -> f64 {
    4.0 * tanh_sinh(|t| t.cos().max(0.0).powf(p), 0.0, 0.5 * PI, 1e-14)
}

fn tanh_sinh(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let term = |t: f64| {
        let u = 0.5 * PI * t.sinh();
        let w = 0.5 * PI * t.cosh() / u.cosh().powi(2);
        let x = mid + half * u.tanh();
        if x <= a || x >= b {
            0.0
        } else {
            w * f(x)
        }
    };
    let t_max = 3.5;
    let mut step = 0.5;
    let mut sum = term(0.0);
    let mut k = 1;
    while k as f64 * step <= t_max {
        let t = k as f64 * step;
        sum += term(t) + term(-t);
        k += 1;
    }
    let mut estimate = half * step * sum;
    for _ in 0..12 {
        // add the midpoints of the current level
        step *= 0.5;
        let mut k = 1;
        while k as f64 * step <= t_max {
            let t = k as f64 * step;
            sum += term(t) + term(-t);
            k += 2;
        }
        let next = half * step * sum;
        if (next - estimate).abs() <= tol * next.abs() {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// `|S^{N-1}|`: 2 on the line, 2π in the plane.
pub fn sphere_measure(dim: usize) -> f64 {
    if dim == 1 {
        2.0
    } else {
        2.0 * PI
    }
}

/// Contribution of pairs closer than `radius` for a locally linear function:
/// `∫_{|z|<radius} |∇u · z|^p |z|^{-N-ps} dz`, given `grad_p_norm = |∇u|^p`.
pub fn near_field_correction(radius: f64, kp: &KernelParams, grad_p_norm: f64) -> f64 {
    near_field_coefficient(radius, kp) * grad_p_norm
}

pub(crate) fn near_field_coefficient(radius: f64, kp: &KernelParams) -> f64 {
    let order = kp.p - kp.ps();
    let angular = if kp.dim == 1 { 2.0 } else { angular_moment(kp.p) };
    angular * radius.powf(order) / order
}

/// Exterior pairs beyond distance `r` from a point where `|u|^p = u_abs_p`
/// and `u` vanishes outside: `u_abs_p ∫_{|z|>r} |z|^{-N-ps} dz`.
pub fn far_field_tail(r: f64, u_abs_p: f64, kp: &KernelParams) -> f64 {
    u_abs_p * sphere_measure(kp.dim) * r.powf(-kp.ps()) / kp.ps()
}

/// The three algebraic inequalities used as property-test oracles.
#[derive(Debug, Clone)]
pub enum InequalityCheck<'a> {
    /// `<|a|^{p-2}a - |b|^{p-2}b, a - b> >= C |a-b|^2 / (|a|+|b|)^{2-p}`.
    Monotonicity {
        a: &'a [f64],
        b: &'a [f64],
        p: f64,
        constant: Option<f64>,
    },
    /// `|a-b|^{p-2}(a-b)(a^δ - b^δ) >= |G(a) - G(b)|^p` with
    /// `G(t) = ∫_0^t (g')^{1/p}` for `g(t) = t^δ` on `t >= 0`.
    PowerComposition { a: f64, b: f64, p: f64, delta: f64 },
    /// `|x - y| <= ε^{1-q} |x^q - y^q|` when one argument is at least `ε`
    /// and the other nonnegative.
    PowerDifference { x: f64, y: f64, q: f64, eps: f64 },
}

/// A constant for which the monotonicity inequality is provable:
/// `p - 1` below 2, `min(1/2, 2^{2-p})` from 2 on.
pub fn monotonicity_constant(p: f64) -> f64 {
    if p < 2.0 {
        p - 1.0
    } else {
        0.5f64.min(2f64.powf(2.0 - p))
    }
}

/// Left side of the monotonicity inequality.
pub fn monotonicity_lhs(a: &[f64], b: &[f64], p: f64) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    let pow = |n: f64| if n == 0.0 { 0.0 } else { n.powf(p - 2.0) };
    let (sa, sb) = (pow(na), pow(nb));
    a.iter()
        .zip(b)
        .map(|(x, y)| (sa * x - sb * y) * (x - y))
        .sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `G(t)` for the power map `t ↦ t^δ`.
pub fn power_composition_primitive(t: f64, p: f64, delta: f64) -> f64 {
    let e = (delta + p - 1.0) / p;
    delta.powf(1.0 / p) / e * t.powf(e)
}

/// Evaluates one inequality. `Ok(true)` when it holds up to rounding.
pub fn inequality_oracle(check: &InequalityCheck<'_>) -> Result<bool> {
    const REL: f64 = 1e-10;
    match *check {
        InequalityCheck::Monotonicity { a, b, p, constant } => {
            let hyp = |reason: String| Error::Hypothesis {
                kind: "monotonicity",
                reason,
            };
            if a.len() != b.len() || a.is_empty() {
                return Err(hyp("vectors must have equal, nonzero length".into()));
            }
            if !(p > 1.0 && p.is_finite()) {
                return Err(hyp(format!("p must exceed 1, got {p}")));
            }
            let c = constant.unwrap_or_else(|| monotonicity_constant(p));
            if !(c > 0.0) {
                return Err(hyp(format!("constant must be positive, got {c}")));
            }
            let lhs = monotonicity_lhs(a, b, p);
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let d2 = norm(&diff).powi(2);
            if d2 == 0.0 {
                return Ok(lhs.abs() <= REL * (norm(a).powf(p) + norm(b).powf(p)));
            }
            let rhs = c * d2 * (norm(a) + norm(b)).powf(p - 2.0);
            Ok(lhs >= rhs * (1.0 - REL))
        }
        InequalityCheck::PowerComposition { a, b, p, delta } => {
            let hyp = |reason: String| Error::Hypothesis {
                kind: "power-composition",
                reason,
            };
            if !(p > 1.0 && p.is_finite()) {
                return Err(hyp(format!("p must exceed 1, got {p}")));
            }
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(hyp(format!("exponent must be positive, got {delta}")));
            }
            if !(a >= 0.0 && b >= 0.0) {
                return Err(hyp("arguments must lie on the increasing branch t >= 0".into()));
            }
            let d = a - b;
            let lhs = a_kernel(d, p) * (a.powf(delta) - b.powf(delta));
            let rhs = (power_composition_primitive(a, p, delta)
                - power_composition_primitive(b, p, delta))
            .abs()
            .powf(p);
            Ok(lhs >= rhs * (1.0 - REL) - f64::MIN_POSITIVE)
        }
        InequalityCheck::PowerDifference { x, y, q, eps } => {
            let hyp = |reason: String| Error::Hypothesis {
                kind: "power-difference",
                reason,
            };
            if !(q > 1.0 && q.is_finite()) {
                return Err(hyp(format!("q must exceed 1, got {q}")));
            }
            if !(eps > 0.0) {
                return Err(hyp(format!("eps must be positive, got {eps}")));
            }
            let in_set = (x >= eps && y >= 0.0) || (y >= eps && x >= 0.0);
            if !in_set {
                return Err(hyp(format!("({x}, {y}) lies outside both admissible sets")));
            }
            let lhs = (x - y).abs();
            let rhs = eps.powf(1.0 - q) * (x.powf(q) - y.powf(q)).abs();
            Ok(lhs <= rhs * (1.0 + REL))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn a_kernel_examples() {
        for p in [1.2, 2.0, 3.5] {
            assert_eq!(a_kernel(0.0, p), 0.0);
        }
        assert_eq!(a_kernel(3.5, 2.0), 3.5);
        assert_eq!(a_kernel(-2.0, 3.0), -4.0);
        assert!(!a_kernel(0.0, 1.1).is_nan());
    }

    #[test]
    fn a_kernel_odd_and_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let p = rng.random_range(1.05..5.0);
            let (x, y): (f64, f64) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            assert_eq!(a_kernel(-x, p), -a_kernel(x, p));
            if x < y {
                assert!(a_kernel(x, p) < a_kernel(y, p), "p={p} x={x} y={y}");
            }
        }
    }

    #[test]
    fn smoothed_kernel_slope_matches_difference() {
        for &p in &[1.5, 2.0, 3.0] {
            for &t in &[-0.7, 1e-3, 2.0] {
                let e = 1e-6;
                let fd = (a_kernel_smoothed(t + e, p, 1e-4) - a_kernel_smoothed(t - e, p, 1e-4))
                    / (2.0 * e);
                assert_relative_eq!(fd, a_kernel_smoothed_slope(t, p, 1e-4), max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn kernel_weight_examples() {
        let kp = KernelParams::new(2.0, 0.5, 1).unwrap();
        assert_eq!(kernel_weight(&[0.0], &[1.0], &kp).unwrap(), 1.0);
        assert_eq!(kernel_weight(&[0.0], &[2.0], &kp).unwrap(), 0.25);
        assert!(matches!(
            kernel_weight(&[0.3], &[0.3], &kp),
            Err(Error::SingularDiagonal)
        ));
        let kp2 = KernelParams::new(1.7, 0.3, 2).unwrap();
        let (x, y) = ([0.1, -0.4], [0.9, 0.35]);
        assert_eq!(
            kernel_weight(&x, &y, &kp2).unwrap(),
            kernel_weight(&y, &x, &kp2).unwrap()
        );
    }

    #[test]
    fn kernel_params_validation() {
        assert!(KernelParams::new(1.0, 0.5, 1).is_err());
        assert!(KernelParams::new(2.0, 1.0, 1).is_err());
        assert!(KernelParams::new(2.0, 0.5, 3).is_err());
    }

    #[test]
    fn truncate_examples() {
        assert_eq!(truncate(0.5, 1.0), 0.5);
        assert_eq!(truncate(2.0, 1.0), 1.0);
        assert_eq!(truncate(-3.0, 1.0), -1.0);
    }

    #[test]
    fn g_trunc_examples() {
        assert_eq!(g_trunc(1.0, 10.0, 1.0), 1.0);
        assert_relative_eq!(g_trunc(0.01, 10.0, 1.0), 10.0);
        assert_eq!(g_trunc(-5.0, 10.0, 1.0), 10.0);
    }

    #[test]
    fn g_trunc_primitive_differentiates_back() {
        for &delta in &[0.5, 1.0, 2.0] {
            let k = 4.0;
            assert_eq!(g_trunc_primitive(0.0, k, delta), 0.0);
            for &l in &[-1.0, 0.05, 0.3, 1.7] {
                let e = 1e-6;
                let fd = (g_trunc_primitive(l + e, k, delta) - g_trunc_primitive(l - e, k, delta))
                    / (2.0 * e);
                assert_relative_eq!(fd, g_trunc(l, k, delta), max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn angular_moment_matches_closed_form() {
        // 2 sqrt(pi) Gamma((p+1)/2) / Gamma(p/2 + 1)
        let cases = [
            (1.5, 3.496_076_739_056_159_7),
            (2.0, PI),
            (2.5, 2.875_536_563_365_421_3),
            (3.0, 8.0 / 3.0),
            (4.0, 0.75 * PI),
        ];
        for (p, want) in cases {
            assert_relative_eq!(angular_moment(p), want, max_relative = 1e-12);
        }
    }

    #[test]
    fn near_field_examples() {
        let kp = KernelParams::new(2.0, 0.5, 1).unwrap();
        assert_eq!(near_field_correction(0.3, &kp, 0.0), 0.0);
        assert_relative_eq!(near_field_correction(1.0, &kp, 1.0), 2.0);
        let mut last = f64::INFINITY;
        for k in 0..10 {
            let c = near_field_correction(0.5f64.powi(k), &kp, 1.0);
            assert!(c < last);
            last = c;
        }
        assert!(last < 1e-2);
    }

    #[test]
    fn far_field_examples() {
        let kp = KernelParams::new(2.0, 0.5, 1).unwrap();
        assert_eq!(far_field_tail(1.0, 0.0, &kp), 0.0);
        assert_relative_eq!(far_field_tail(1.0, 1.0, &kp), 2.0);
        let kp2 = KernelParams::new(3.0, 0.2, 2).unwrap();
        for &r in &[0.1, 1.0, 7.0] {
            assert!(far_field_tail(2.0 * r, 1.3, &kp2) < far_field_tail(r, 1.3, &kp2));
        }
    }

    #[test]
    fn oracle_examples() {
        let a = [0.3, -1.2];
        assert!(inequality_oracle(&InequalityCheck::Monotonicity {
            a: &a,
            b: &a,
            p: 1.5,
            constant: None
        })
        .unwrap());
        assert!(inequality_oracle(&InequalityCheck::PowerDifference {
            x: 3.0,
            y: 1.0,
            q: 2.0,
            eps: 1.0
        })
        .unwrap());
        assert!(inequality_oracle(&InequalityCheck::PowerComposition {
            a: 0.7,
            b: 0.7,
            p: 3.0,
            delta: 2.0
        })
        .unwrap());
    }

    #[test]
    fn oracle_rejects_outside_hypotheses() {
        assert!(inequality_oracle(&InequalityCheck::PowerDifference {
            x: 0.1,
            y: 0.2,
            q: 2.0,
            eps: 1.0
        })
        .is_err());
        assert!(inequality_oracle(&InequalityCheck::PowerComposition {
            a: -1.0,
            b: 0.2,
            p: 2.0,
            delta: 1.0
        })
        .is_err());
        assert!(inequality_oracle(&InequalityCheck::Monotonicity {
            a: &[1.0],
            b: &[1.0, 2.0],
            p: 2.0,
            constant: None
        })
        .is_err());
    }

    #[test]
    fn monotonicity_constant_is_sharp_enough_at_known_extremes() {
        // a = 1, b = -1 and a = 1, b = 0 are the binding scalar configurations
        for &p in &[1.1, 1.5, 2.0, 2.5, 3.0, 6.0] {
            for (a, b) in [(1.0, -1.0), (1.0, 0.0), (1.0, 1.0 + 1e-4)] {
                assert!(inequality_oracle(&InequalityCheck::Monotonicity {
                    a: &[a],
                    b: &[b],
                    p,
                    constant: None
                })
                .unwrap());
            }
        }
        // the constant 1 fails for p = 3 at a = 1, b = -1
        assert!(!inequality_oracle(&InequalityCheck::Monotonicity {
            a: &[1.0],
            b: &[-1.0],
            p: 3.0,
            constant: Some(1.0)
        })
        .unwrap());
    }
}
