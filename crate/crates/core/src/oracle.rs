//! Brute-force references for auditing the forward model and the root finder.
//!
//! Nothing here evaluates channel polynomials on the intensity path: the
//! sandwich operator is assembled from dense exponentials computed by a
//! Taylor scaling-and-squaring routine that is independent of the
//! eigendecomposition used in [`crate::spin_algebra::mat_exp_skew`].

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::evolution::{fold_angle, SuTwoParams, ZERO_VISIBILITY};
use crate::polarimetry::ChannelPolynomial;
use crate::spin_algebra::{angular_momentum_ops, HalfInt, SpinMatrix};

/// `exp(i theta H)` by scaling and squaring of a truncated Taylor series.
pub fn expm_taylor(h: &SpinMatrix, theta: f64) -> SpinMatrix {
    let dim = h.dim();
    let a = h.matrix() * Complex64::new(0.0, theta);
    let norm: f64 = (0..dim).map(|c| (0..dim).map(|r| a[(r, c)].norm()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm > 0.25 { (norm / 0.25).log2().ceil() as u32 } else { 0 };
    let scaled = &a * Complex64::new(0.5f64.powi(squarings as i32), 0.0);

    let mut result = DMatrix::<Complex64>::identity(dim, dim);
    let mut term = DMatrix::<Complex64>::identity(dim, dim);
    for k in 1..=20 {
        term = &term * &scaled * Complex64::new(1.0 / f64::from(k), 0.0);
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    SpinMatrix::from_matrix(h.spin(), result)
}

/// Evolution operator from three dense exponentials.
pub fn direct_unitary(j: HalfInt, p: &SuTwoParams) -> SpinMatrix {
    let ops = angular_momentum_ops(j);
    let left = expm_taylor(&ops.jz, p.delta + p.zeta);
    let middle = expm_taylor(&ops.jy, -2.0 * p.xi);
    let right = expm_taylor(&ops.jz, p.delta - p.zeta);
    &(&left * &middle) * &right
}

/// Flip, guide phase, evolution, guide phase undone, flip back.
pub fn direct_sandwich(j: HalfInt, p: &SuTwoParams, phi: f64) -> SpinMatrix {
    let ops = angular_momentum_ops(j);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let factors = [
        expm_taylor(&ops.jy, half_pi),
        expm_taylor(&ops.jz, -phi),
        direct_unitary(j, p),
        expm_taylor(&ops.jz, phi),
        expm_taylor(&ops.jy, -half_pi),
    ];
    factors.iter().skip(1).fold(factors[0].clone(), |acc, f| &acc * f)
}

/// `|<j mp| U~ |j m>|^2` from the dense sandwich operator.
pub fn direct_intensity(j: HalfInt, m: HalfInt, mp: HalfInt, p: &SuTwoParams, phi: f64) -> f64 {
    direct_sandwich(j, p, phi).element(mp, m).norm_sqr()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectPhase {
    /// `None` when the diagonal element is below the zero-visibility threshold.
    pub phase: Option<f64>,
    pub visibility: f64,
}

/// Argument and modulus of `<jm|U|jm>` from the dense operator.
pub fn direct_phase_visibility(j: HalfInt, m: HalfInt, p: &SuTwoParams) -> DirectPhase {
    let el = direct_unitary(j, p).element(m, m);
    let visibility = el.norm();
    DirectPhase { phase: (visibility >= ZERO_VISIBILITY).then(|| fold_angle(el.arg())), visibility }
}

/// Exhaustive root scan of `cp(x) = target` on `[0, 1]`.
///
/// Sign changes between neighbouring grid points are refined by bisection;
/// grid-local minima of `|cp - target|` without a sign change are refined by
/// golden-section search and kept when the residual vanishes to 1e-12
/// (tangential roots).
pub fn grid_roots(cp: &ChannelPolynomial, target: f64, resolution: usize) -> Vec<f64> {
    let n = resolution.max(2);
    let f = |x: f64| cp.eval(x) - target;
    let xs: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut roots = Vec::new();

    for i in 0..=n {
        if fs[i] == 0.0 {
            roots.push(xs[i]);
        }
    }
    for i in 0..n {
        if fs[i] != 0.0 && fs[i + 1] != 0.0 && (fs[i] < 0.0) != (fs[i + 1] < 0.0) {
            let (mut lo, mut hi) = (xs[i], xs[i + 1]);
            let lo_neg = fs[i] < 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if (f(mid) < 0.0) == lo_neg {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
    }
    for i in 0..=n {
        let here = fs[i].abs();
        let left = if i > 0 { fs[i - 1].abs() } else { f64::INFINITY };
        let right = if i < n { fs[i + 1].abs() } else { f64::INFINITY };
        if here == 0.0 || here > left || here > right {
            continue;
        }
        let same_sign_left = i == 0 || (fs[i - 1] < 0.0) == (fs[i] < 0.0);
        let same_sign_right = i == n || (fs[i + 1] < 0.0) == (fs[i] < 0.0);
        if !(same_sign_left && same_sign_right) {
            continue;
        }
        let (mut a, mut b) = (xs[i.saturating_sub(1)], xs[(i + 1).min(n)]);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c).abs() < f(d).abs() {
                b = d;
            } else {
                a = c;
            }
        }
        let x = 0.5 * (a + b);
        if f(x).abs() <= 1e-12 {
            roots.push(x);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-7);
    roots
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarimetry::{channel_polynomial, spin_half_intensity};
    use crate::spin_algebra::mat_exp_skew;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn h(t: i32) -> HalfInt {
        HalfInt::from_twice(t)
    }

    #[test]
    fn taylor_exponential_agrees_with_eigen_route() {
        for two_j in 0..=12 {
            let j = h(two_j);
            let ops = angular_momentum_ops(j);
            let gen = ops.along([0.2, 0.9, -0.3]);
            for &theta in &[-4.0 * PI, -0.3, 1.7, 4.0 * PI] {
                let a = expm_taylor(&gen, theta);
                let b = mat_exp_skew(&gen, theta).unwrap();
                assert!(a.max_abs_diff(&b) < 1e-11, "2j={two_j} theta={theta}");
                assert!(a.unitarity_error() < 1e-12);
            }
        }
    }

    #[test]
    fn spin_half_matches_closed_form() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let p = SuTwoParams::new(PI * (2.0 * next() - 1.0), PI * next(), PI * (2.0 * next() - 1.0));
            let phi = 2.0 * PI * next();
            let direct = direct_intensity(h(1), h(1), h(1), &p, phi);
            assert!((direct - spin_half_intensity(&p, phi)).abs() < 1e-12);
        }
    }

    #[test]
    fn worked_example_from_dense_product() {
        let p = SuTwoParams::new(PI / 5.0, PI / 5.0, PI / 5.0);
        let a = direct_intensity(h(3), h(1), h(1), &p, PI / 5.0);
        let b = direct_intensity(h(3), h(1), h(3), &p, PI / 5.0);
        assert!((a - 0.2189).abs() < 5e-5);
        assert!((b - 0.3147).abs() < 5e-5);
    }

    #[test]
    fn direct_phase_cases() {
        let cyclic = direct_phase_visibility(h(3), h(3), &SuTwoParams::new(1.9, 0.0, 0.4));
        assert!((cyclic.phase.unwrap() - fold_angle(3.0 * 1.9)).abs() < 1e-12);
        assert!((cyclic.visibility - 1.0).abs() < 1e-12);
        let flip = direct_phase_visibility(h(4), h(2), &SuTwoParams::new(0.3, FRAC_PI_2, 0.2));
        assert!(flip.visibility < 1e-12);
        assert!(flip.phase.is_none());
    }

    #[test]
    fn grid_root_examples() {
        let identity = channel_polynomial(h(1), h(1), h(1)).unwrap();
        assert_eq!(grid_roots(&identity, 0.5, 10_000), vec![0.5]);
        let tangent = channel_polynomial(h(3), h(1), h(1)).unwrap();
        let roots = grid_roots(&tangent, 0.0, 10_000);
        assert_eq!(roots.len(), 2, "{roots:?}");
        assert_eq!(roots[0], 0.0);
        assert!((roots[1] - 2.0 / 3.0).abs() < 1e-7);
    }
}
