//! SO(3) evolutions in the `(delta, xi, zeta)` parametrization, the relative
//! phase and visibility they imprint on `|jm>`, and geodesic polygons for
//! parallel-transport checks.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin_algebra::{
    angular_momentum_ops, binomial, check_projection, mat_exp_skew, wigner_small_d, HalfInt, SpinMatrix, MAX_TWO_J,
};

/// Below this `|<jm|U|jm>|` the relative phase is reported as undefined.
pub const ZERO_VISIBILITY: f64 = 1e-9;

/// Folds an angle into the principal range `(-pi, pi]`.
pub fn fold_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(TAU);
    if y > PI {
        y -= TAU;
    }
    y
}

/// Evolution parameters: `U = exp(i(delta+zeta)Jz) exp(-i 2 xi Jy) exp(i(delta-zeta)Jz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuTwoParams {
    pub delta: f64,
    pub xi: f64,
    pub zeta: f64,
}

impl SuTwoParams {
    pub const fn new(delta: f64, xi: f64, zeta: f64) -> Self {
        Self { delta, xi, zeta }
    }

    /// Reporting form with `delta, zeta` in `(-pi, pi]` and `xi` in `[0, pi)`.
    pub fn canonical(&self) -> Self {
        Self { delta: fold_angle(self.delta), xi: self.xi.rem_euclid(PI), zeta: fold_angle(self.zeta) }
    }

    pub fn to_euler(&self) -> EulerAngles {
        EulerAngles { alpha: -self.delta - self.zeta, beta: 2.0 * self.xi, gamma: self.zeta - self.delta }
    }
}

/// Standard Euler angles of the same rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EulerAngles {
    pub fn to_su_two(&self) -> SuTwoParams {
        SuTwoParams {
            delta: -(self.alpha + self.gamma) / 2.0,
            xi: self.beta / 2.0,
            zeta: -(self.alpha - self.gamma) / 2.0,
        }
    }
}

/// The evolution operator on spin `j`.
pub fn so3_unitary(j: HalfInt, p: &SuTwoParams) -> SpinMatrix {
    let ops = angular_momentum_ops(j);
    // generators are exactly Hermitian by construction
    let left = mat_exp_skew(&ops.jz, p.delta + p.zeta).expect("Jz is Hermitian");
    let middle = mat_exp_skew(&ops.jy, -2.0 * p.xi).expect("Jy is Hermitian");
    let right = mat_exp_skew(&ops.jz, p.delta - p.zeta).expect("Jz is Hermitian");
    &(&left * &middle) * &right
}

/// `arg <jm|U|jm> = 2 m delta + arg d^j_mm(xi)` in `(-pi, pi]`.
pub fn pancharatnam_phase(j: HalfInt, m: HalfInt, p: &SuTwoParams) -> Result<f64> {
    let d = wigner_small_d(j, m, m, p.xi)?;
    if d.abs() < ZERO_VISIBILITY {
        return Err(Error::UndefinedPhase(d.abs()));
    }
    let sign_part = if d < 0.0 { PI } else { 0.0 };
    Ok(fold_angle(m.value() * 2.0 * p.delta + sign_part))
}

/// `|<jm|U|jm>| = |d^j_mm(xi)|`.
pub fn visibility(j: HalfInt, m: HalfInt, xi: f64) -> Result<f64> {
    Ok(wigner_small_d(j, m, m, xi)?.abs())
}

/// Visibility as a polynomial in `c = |cos xi|`:
/// `|sum_nu (-1)^(nu+j+m) C(j+m, nu) C(j-m, j+m-nu) c^(2nu-2m) (1-c^2)^(j+m-nu)|`.
pub fn visibility_polynomial(j: HalfInt, m: HalfInt, c: f64) -> Result<f64> {
    check_projection(j, m)?;
    if j.twice() > MAX_TWO_J {
        return Err(Error::SpinTooLarge(j));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::Domain(format!("|cos xi| = {c} is outside [0, 1]")));
    }
    let j_plus_m = j.plus(m);
    let j_minus_m = j.plus(-m);
    let s2 = 1.0 - c * c;
    let mut sum = 0.0;
    for nu in 0..=j_plus_m {
        let b = binomial(j_plus_m, nu) * binomial(j_minus_m, j_plus_m - nu);
        if b == 0.0 {
            continue;
        }
        // 2nu - 2m is an integer; nonnegative whenever the binomials are nonzero
        let c_exp = 2 * nu - m.twice();
        let sign = if (nu + j_plus_m).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        sum += sign * b * c.powi(c_exp) * s2.powi(j_plus_m - nu);
    }
    Ok(sum.abs())
}

const UNIT_TOL: f64 = 1e-12;
const SAME_POINT: f64 = 1e-12;

/// Closed polygon of great-circle arcs on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPath {
    vertices: Vec<Vector3<f64>>,
    omega: f64,
}

impl GeodesicPath {
    /// Builds the path from its vertices. A repeated first vertex at the end
    /// is accepted; otherwise the closing arc is implied. Consecutive
    /// duplicates are dropped.
    pub fn new(vertices: Vec<[f64; 3]>) -> Result<Self> {
        let mut pts: Vec<Vector3<f64>> = Vec::with_capacity(vertices.len());
        for (k, v) in vertices.iter().enumerate() {
            let v = Vector3::new(v[0], v[1], v[2]);
            if (v.norm() - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidPath(format!("vertex {k} has norm {}", v.norm())));
            }
            if pts.last().is_some_and(|last| (last - v).norm() <= SAME_POINT) {
                continue;
            }
            pts.push(v);
        }
        while pts.len() > 1 && (pts[0] - pts[pts.len() - 1]).norm() <= SAME_POINT {
            pts.pop();
        }
        if pts.is_empty() {
            return Err(Error::InvalidPath("no vertices".into()));
        }
        let n = pts.len();
        for k in 0..n {
            let next = (k + 1) % n;
            if n > 1 && (pts[k] + pts[next]).norm() <= 1e-9 {
                return Err(Error::AmbiguousGeodesic(k, next));
            }
        }
        let omega = spherical_excess(&pts);
        Ok(Self { vertices: pts, omega })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    /// Signed solid angle in `(-2pi, 2pi]`.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Arcs as `(unit rotation axis, angle)`, closing arc included.
    fn arcs(&self) -> impl Iterator<Item = (Vector3<f64>, f64)> + '_ {
        let n = self.vertices.len();
        (0..if n > 1 { n } else { 0 }).map(move |k| {
            let a = self.vertices[k];
            let b = self.vertices[(k + 1) % n];
            let cross = a.cross(&b);
            let angle = cross.norm().atan2(a.dot(&b));
            (cross.normalize(), angle)
        })
    }
}

/// Signed spherical excess via the turning angles of the closed polygon:
/// `Omega = 2pi - sum(turn)`, folded into `(-2pi, 2pi]` so that clockwise
/// traversal yields the negative of the enclosed area.
fn spherical_excess(pts: &[Vector3<f64>]) -> f64 {
    let n = pts.len();
    if n < 2 {
        return 0.0;
    }
    let mut total_turn = 0.0;
    for k in 0..n {
        let prev = pts[(k + n - 1) % n];
        let here = pts[k];
        let next = pts[(k + 1) % n];
        // arrival direction at `here` is tangent to the arc prev -> here
        let t_in = -here.cross(&prev.cross(&here)).normalize();
        let t_out = -here.cross(&here.cross(&next)).normalize();
        let sin = here.dot(&t_in.cross(&t_out));
        let cos = t_in.dot(&t_out);
        // cusp (exact reversal): count as a +pi turn
        let turn = if sin.abs() < 1e-12 && cos < 0.0 { PI } else { sin.atan2(cos) };
        total_turn += turn;
    }
    let mut omega = TAU - total_turn;
    omega = omega.rem_euclid(2.0 * TAU);
    if omega > TAU + 1e-12 {
        omega -= 2.0 * TAU;
    }
    if omega.abs() < 1e-13 {
        omega = 0.0;
    }
    omega
}

/// Signed spherical excess of the closed geodesic polygon.
pub fn solid_angle(path: &GeodesicPath) -> f64 {
    path.omega()
}

/// Product of rotations along each great-circle arc of the path, applied in
/// traversal order.
pub fn geodesic_unitary(j: HalfInt, path: &GeodesicPath) -> SpinMatrix {
    let ops = angular_momentum_ops(j);
    let mut total = SpinMatrix::identity(j);
    for (axis, angle) in path.arcs() {
        let generator = ops.along([axis.x, axis.y, axis.z]);
        let rot = mat_exp_skew(&generator, -angle).expect("n.J is Hermitian");
        total = &rot * &total;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin_algebra::projections;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    const FRAC_PI_5: f64 = PI / 5.0;

    const Z: [f64; 3] = [0.0, 0.0, 1.0];
    const X: [f64; 3] = [1.0, 0.0, 0.0];
    const Y: [f64; 3] = [0.0, 1.0, 0.0];

    fn h(twice: i32) -> HalfInt {
        HalfInt::from_twice(twice)
    }

    #[test]
    fn identity_parameters_give_identity() {
        for two_j in 0..=6 {
            let u = so3_unitary(h(two_j), &SuTwoParams::new(0.0, 0.0, 0.0));
            assert!(u.max_abs_diff(&SpinMatrix::identity(h(two_j))) < 1e-15);
        }
    }

    #[test]
    fn cyclic_spin_half_is_diagonal() {
        let (delta, zeta) = (0.7, -1.9);
        let u = so3_unitary(h(1), &SuTwoParams::new(delta, 0.0, zeta));
        let e = |x: f64| Complex64::new(0.0, x).exp();
        assert!((u.matrix()[(0, 0)] - e(delta)).norm() < 1e-15);
        assert!((u.matrix()[(1, 1)] - e(-delta)).norm() < 1e-15);
        assert!(u.matrix()[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn worked_example_diagonal_modulus() {
        let p = SuTwoParams::new(FRAC_PI_5, FRAC_PI_5, FRAC_PI_5);
        // oracle: the 2x2 factors are diag(e^{ia/2}, e^{-ia/2}), [[c, -s], [s, c]],
        // diag(e^{ib/2}, e^{-ib/2}); the (+,+) entry of the product is
        let e = |x: f64| Complex64::new(0.0, x).exp();
        let (a, b) = (p.delta + p.zeta, p.delta - p.zeta);
        let u00 = e(a / 2.0) * FRAC_PI_5.cos() * e(b / 2.0);
        let u = so3_unitary(h(1), &p);
        assert!((u.element(h(1), h(1)) - u00).norm() < 1e-15);
        assert!((u00.norm() - 0.8090169943749475).abs() < 1e-15);
        assert!(u.unitarity_error() < 1e-12);
    }

    #[test]
    fn phase_examples() {
        let p = SuTwoParams::new(FRAC_PI_5, FRAC_PI_5, FRAC_PI_5);
        let phi = pancharatnam_phase(h(1), h(1), &p).unwrap();
        assert!((phi - FRAC_PI_5).abs() < 1e-15);
        assert!((phi.cos().powi(2) - 0.6545084971874737).abs() < 1e-15);

        // m = 0 only sees the sign of d
        for &xi in &[0.2, 0.9, 1.4, 2.3] {
            let phase = pancharatnam_phase(h(2), h(0), &SuTwoParams::new(1.3, xi, -0.4)).unwrap();
            assert!(phase == 0.0 || phase == PI, "phase {phase}");
        }

        // cyclic: 2 m delta folded
        let p = SuTwoParams::new(2.2, 0.0, 0.0);
        let phase = pancharatnam_phase(h(3), h(3), &p).unwrap();
        assert!((phase - fold_angle(3.0 * 2.2)).abs() < 1e-14);
    }

    #[test]
    fn phase_undefined_at_spin_flip() {
        let err = pancharatnam_phase(h(1), h(1), &SuTwoParams::new(0.3, FRAC_PI_2, 0.1)).unwrap_err();
        assert!(matches!(err, Error::UndefinedPhase(_)));
    }

    #[test]
    fn visibility_examples() {
        for &xi in &[0.0, 0.4, 1.0, 2.8] {
            assert!((visibility(h(1), h(1), xi).unwrap() - f64::cos(xi).abs()).abs() < 1e-15);
        }
        for two_j in 1..=8 {
            for m in projections(h(two_j)).filter(|m| m.twice() != 0) {
                assert!(visibility(h(two_j), m, FRAC_PI_2).unwrap() < 1e-15);
            }
        }
        let v = visibility(h(3), h(1), FRAC_PI_5).unwrap();
        let c = FRAC_PI_5.cos();
        assert!((v - (3.0 * c.powi(3) - 2.0 * c).abs()).abs() < 1e-15);
        assert!((v - 0.03).abs() < 0.005);
    }

    #[test]
    fn visibility_polynomial_examples() {
        for &c in &[0.0, 0.25, 0.6, 1.0] {
            assert!((visibility_polynomial(h(2), h(2), c).unwrap() - c * c).abs() < 1e-15);
            assert!((visibility_polynomial(h(3), h(3), c).unwrap() - c.powi(3)).abs() < 1e-15);
        }
        for two_j in 0..=12 {
            for m in projections(h(two_j)) {
                assert!((visibility_polynomial(h(two_j), m, 1.0).unwrap() - 1.0).abs() < 1e-12);
            }
        }
        assert!(matches!(visibility_polynomial(h(2), h(0), 1.2), Err(Error::Domain(_))));
    }

    #[test]
    fn euler_round_trip() {
        let p = SuTwoParams::new(0.4, 1.2, -2.1);
        let back = p.to_euler().to_su_two();
        assert!((back.delta - p.delta).abs() < 1e-12);
        assert!((back.xi - p.xi).abs() < 1e-12);
        assert!((back.zeta - p.zeta).abs() < 1e-12);
        let folded = SuTwoParams::new(7.0, -0.5, 4.0).canonical();
        assert!(folded.delta > -PI && folded.delta <= PI);
        assert!(folded.xi >= 0.0 && folded.xi < PI);
        assert!(folded.zeta > -PI && folded.zeta <= PI);
    }

    #[test]
    fn solid_angle_examples() {
        let octant = GeodesicPath::new(vec![Z, X, Y]).unwrap();
        assert!((solid_angle(&octant) - FRAC_PI_2).abs() < 1e-14);
        let reversed = GeodesicPath::new(vec![Z, Y, X]).unwrap();
        assert!((solid_angle(&reversed) + FRAC_PI_2).abs() < 1e-14);
        let closed = GeodesicPath::new(vec![Z, X, Y, Z]).unwrap();
        assert!((closed.omega() - FRAC_PI_2).abs() < 1e-14);

        let square = GeodesicPath::new(vec![X, Y, [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]).unwrap();
        assert!((square.omega() - TAU).abs() < 1e-12);

        let repeated = GeodesicPath::new(vec![Z, X, X, Z]).unwrap();
        assert_eq!(repeated.omega(), 0.0);
        let out_and_back = GeodesicPath::new(vec![Z, X]).unwrap();
        assert_eq!(out_and_back.omega(), 0.0);
    }

    #[test]
    fn path_validation() {
        assert!(matches!(GeodesicPath::new(vec![Z, [0.0, 0.0, -1.0], X]), Err(Error::AmbiguousGeodesic(0, 1))));
        assert!(matches!(GeodesicPath::new(vec![Z, [2.0, 0.0, 0.0]]), Err(Error::InvalidPath(_))));
    }

    #[test]
    fn octant_geodesic_phase() {
        let path = GeodesicPath::new(vec![Z, X, Y]).unwrap();
        let u = geodesic_unitary(h(1), &path);
        let phase = u.element(h(1), h(1)).arg();
        assert!((phase + FRAC_PI_4).abs() < 1e-14);
        assert!((u.element(h(1), h(1)).norm() - 1.0).abs() < 1e-14);
        let u = geodesic_unitary(h(2), &path);
        assert!((u.element(h(2), h(2)).arg() + FRAC_PI_2).abs() < 1e-14);

        let u = geodesic_unitary(h(1), &GeodesicPath::new(vec![Z, X]).unwrap());
        assert!(u.max_abs_diff(&SpinMatrix::identity(h(1))) < 1e-14);
    }

    fn unit(theta: f64, phi: f64) -> [f64; 3] {
        [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn phase_decomposes_into_dynamic_and_sign_part(
            two_j in 0i32..=12, k in 0i32..=12,
            delta in -PI..PI, xi in 0.0..PI, zeta in -PI..PI,
        ) {
            let j = h(two_j);
            let m = h(two_j - 2 * (k % (two_j + 1)));
            let p = SuTwoParams::new(delta, xi, zeta);
            let el = so3_unitary(j, &p).element(m, m);
            // the argument of a small amplitude carries round-off of order 1e-15 / |el|
            prop_assume!(el.norm() > 1e-4);
            let rest = fold_angle(el.arg() - 2.0 * m.value() * delta);
            prop_assert!(rest.abs() <= 1e-9 || (rest.abs() - PI).abs() <= 1e-9, "rest {}", rest);
            let phase = pancharatnam_phase(j, m, &p).unwrap();
            prop_assert!(fold_angle(phase - el.arg()).abs() <= 1e-9);
        }

        #[test]
        fn visibility_independent_of_delta_zeta(two_j in 0i32..=8, k in 0i32..=8, xi in 0.0..PI,
            shifts in proptest::collection::vec((-PI..PI, -PI..PI), 20)) {
            let j = h(two_j);
            let m = h(two_j - 2 * (k % (two_j + 1)));
            let expected = visibility(j, m, xi).unwrap();
            for (delta, zeta) in shifts {
                let el = so3_unitary(j, &SuTwoParams::new(delta, xi, zeta)).element(m, m);
                prop_assert!((el.norm() - expected).abs() <= 1e-12);
            }
            let poly = visibility_polynomial(j, m, xi.cos().abs()).unwrap();
            prop_assert!((poly - expected).abs() <= 1e-10);
            prop_assert!((visibility_polynomial(j, -m, xi.cos().abs()).unwrap() - expected).abs() <= 1e-10);
        }

        #[test]
        fn euler_parametrization_round_trips(delta in -PI..PI, xi in 0.0..PI, zeta in -PI..PI) {
            let p = SuTwoParams::new(delta, xi, zeta);
            let back = p.to_euler().to_su_two().canonical();
            let c = p.canonical();
            prop_assert!(fold_angle(back.delta - c.delta).abs() <= 1e-12);
            prop_assert!((back.xi - c.xi).abs() <= 1e-12);
            prop_assert!(fold_angle(back.zeta - c.zeta).abs() <= 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn geodesic_triangle_phase_is_minus_m_omega(
            t1 in 0.1..3.0f64, p1 in -PI..PI, t2 in 0.1..3.0f64, p2 in -PI..PI,
        ) {
            let path = GeodesicPath::new(vec![Z, unit(t1, p1), unit(t2, p2)]);
            prop_assume!(path.is_ok());
            let path = path.unwrap();
            for two_j in 1..=6 {
                let j = h(two_j);
                let u = geodesic_unitary(j, &path);
                for m in projections(j) {
                    let el = u.element(m, m);
                    let expected = -m.value() * path.omega();
                    prop_assert!((el.norm() - 1.0).abs() <= 1e-8);
                    prop_assert!((el.arg().cos() - expected.cos()).abs() <= 1e-8);
                    prop_assert!((el.arg().sin() - expected.sin()).abs() <= 1e-8);
                }
            }
        }
    }
}
