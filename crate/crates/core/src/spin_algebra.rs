//! Half-integer bookkeeping, spin-j angular momentum matrices, Hermitian
//! exponentials, Wigner small-d elements and Chebyshev polynomials.
//!
//! Matrices are indexed by projection in descending order: row/column 0 is
//! `m = j`, the last row/column is `m = -j`.

use std::fmt;
use std::ops::{Mul, Neg};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `2j` for which exact integer factorials are available.
pub const MAX_TWO_J: i32 = 24;

/// Tolerance on the Hermiticity of a generator handed to [`mat_exp_skew`].
pub const HERMITIAN_TOL: f64 = 1e-12;

/// A half-integer stored as twice its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HalfInt(i32);

impl HalfInt {
    pub const ZERO: HalfInt = HalfInt(0);
    pub const HALF: HalfInt = HalfInt(1);
    pub const ONE: HalfInt = HalfInt(2);

    pub const fn from_twice(twice: i32) -> Self {
        HalfInt(twice)
    }

    pub const fn twice(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }

    pub const fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    /// Validates `self` as a spin label.
    pub fn spin(twice: i32) -> Result<Self> {
        if twice < 0 {
            return Err(Error::InvalidSpin(twice));
        }
        Ok(HalfInt(twice))
    }

    /// True if `self` is an allowed projection of spin `j`.
    pub fn is_projection_of(self, j: HalfInt) -> bool {
        j.0 >= 0 && self.0.abs() <= j.0 && (j.0 - self.0) % 2 == 0
    }

    /// Integer offset `j + m` for a projection `m` of `j`.
    pub(crate) fn plus(self, other: HalfInt) -> i32 {
        debug_assert!((self.0 + other.0) % 2 == 0);
        (self.0 + other.0) / 2
    }
}

impl Neg for HalfInt {
    type Output = HalfInt;
    fn neg(self) -> HalfInt {
        HalfInt(-self.0)
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

pub fn check_projection(j: HalfInt, m: HalfInt) -> Result<()> {
    if j.0 < 0 {
        return Err(Error::InvalidSpin(j.0));
    }
    if !m.is_projection_of(j) {
        return Err(Error::InvalidProjection { j, m });
    }
    Ok(())
}

/// Projections `j, j-1, ..., -j`.
pub fn projections(j: HalfInt) -> impl DoubleEndedIterator<Item = HalfInt> + Clone {
    (0..=j.0.max(-1)).map(move |k| HalfInt(j.0 - 2 * k))
}

/// Row/column index of projection `m` in a spin-`j` matrix.
pub fn index_of(j: HalfInt, m: HalfInt) -> usize {
    ((j.0 - m.0) / 2) as usize
}

const fn factorial_table() -> [u128; 35] {
    let mut t = [1u128; 35];
    let mut n = 1;
    while n < 35 {
        t[n] = t[n - 1] * n as u128;
        n += 1;
    }
    t
}

static FACTORIALS: [u128; 35] = factorial_table();

/// `n!` as an exact integer, for `n <= 34`.
pub fn factorial_exact(n: u32) -> u128 {
    FACTORIALS[n as usize]
}

pub fn factorial(n: u32) -> f64 {
    FACTORIALS[n as usize] as f64
}

/// Binomial coefficient; zero outside `0 <= k <= n`.
pub fn binomial(n: i32, k: i32) -> f64 {
    if n < 0 || k < 0 || k > n {
        return 0.0;
    }
    let (n, k) = (n as u32, k as u32);
    (FACTORIALS[n as usize] / (FACTORIALS[k as usize] * FACTORIALS[(n - k) as usize])) as f64
}

/// Dense complex `(2j+1) x (2j+1)` matrix in the descending `m` basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinMatrix {
    j: HalfInt,
    data: DMatrix<Complex64>,
}

impl SpinMatrix {
    pub fn from_matrix(j: HalfInt, data: DMatrix<Complex64>) -> Self {
        let dim = (j.twice() + 1) as usize;
        assert_eq!(data.shape(), (dim, dim), "matrix shape does not match spin {j}");
        Self { j, data }
    }

    pub fn identity(j: HalfInt) -> Self {
        let dim = (j.twice() + 1) as usize;
        Self { j, data: DMatrix::identity(dim, dim) }
    }

    pub fn zeros(j: HalfInt) -> Self {
        let dim = (j.twice() + 1) as usize;
        Self { j, data: DMatrix::zeros(dim, dim) }
    }

    pub fn spin(&self) -> HalfInt {
        self.j
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.data
    }

    /// Element `<j mp| M |j m>`.
    pub fn element(&self, mp: HalfInt, m: HalfInt) -> Complex64 {
        self.data[(index_of(self.j, mp), index_of(self.j, m))]
    }

    pub fn adjoint(&self) -> SpinMatrix {
        Self { j: self.j, data: self.data.adjoint() }
    }

    pub fn scale(&self, s: Complex64) -> SpinMatrix {
        Self { j: self.j, data: &self.data * s }
    }

    pub fn commutator(&self, other: &SpinMatrix) -> SpinMatrix {
        Self { j: self.j, data: &self.data * &other.data - &other.data * &self.data }
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &SpinMatrix) -> f64 {
        self.data.iter().zip(other.data.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise deviation of `M^dagger M` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let prod = self.data.adjoint() * &self.data;
        let dim = self.dim();
        let mut worst = 0.0f64;
        for r in 0..dim {
            for c in 0..dim {
                let target = if r == c { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
                worst = worst.max((prod[(r, c)] - target).norm());
            }
        }
        worst
    }

    pub fn hermiticity_error(&self) -> f64 {
        let dim = self.dim();
        let mut worst = 0.0f64;
        for r in 0..dim {
            for c in r..dim {
                worst = worst.max((self.data[(r, c)] - self.data[(c, r)].conj()).norm());
            }
        }
        worst
    }

    fn is_diagonal(&self) -> bool {
        let dim = self.dim();
        (0..dim).all(|r| (0..dim).all(|c| r == c || self.data[(r, c)] == Complex64::new(0.0, 0.0)))
    }
}

impl Mul for &SpinMatrix {
    type Output = SpinMatrix;
    fn mul(self, rhs: &SpinMatrix) -> SpinMatrix {
        assert_eq!(self.j, rhs.j, "spin mismatch in matrix product");
        SpinMatrix { j: self.j, data: &self.data * &rhs.data }
    }
}

impl Mul for SpinMatrix {
    type Output = SpinMatrix;
    fn mul(self, rhs: SpinMatrix) -> SpinMatrix {
        &self * &rhs
    }
}

/// Cartesian angular momentum components for one spin.
#[derive(Debug, Clone)]
pub struct AngularMomentum {
    pub jx: SpinMatrix,
    pub jy: SpinMatrix,
    pub jz: SpinMatrix,
}

impl AngularMomentum {
    /// `n . J` for a (not necessarily unit) direction `n`.
    pub fn along(&self, n: [f64; 3]) -> SpinMatrix {
        let data = self.jx.matrix() * Complex64::new(n[0], 0.0)
            + self.jy.matrix() * Complex64::new(n[1], 0.0)
            + self.jz.matrix() * Complex64::new(n[2], 0.0);
        SpinMatrix::from_matrix(self.jz.spin(), data)
    }
}

/// Builds `Jx`, `Jy`, `Jz` from the ladder matrix elements
/// `<j, m+1| J+ |j, m> = sqrt(j(j+1) - m(m+1))`.
pub fn angular_momentum_ops(j: HalfInt) -> AngularMomentum {
    let dim = (j.twice() + 1) as usize;
    let jv = j.value();
    let mut jz = DMatrix::<Complex64>::zeros(dim, dim);
    let mut jplus = DMatrix::<Complex64>::zeros(dim, dim);
    for (k, m) in projections(j).enumerate() {
        let mv = m.value();
        jz[(k, k)] = Complex64::new(mv, 0.0);
        if k > 0 {
            // row k-1 holds m+1
            jplus[(k - 1, k)] = Complex64::new((jv * (jv + 1.0) - mv * (mv + 1.0)).sqrt(), 0.0);
        }
    }
    let jminus = jplus.adjoint();
    let jx = (&jplus + &jminus) * Complex64::new(0.5, 0.0);
    let jy = (&jplus - &jminus) * Complex64::new(0.0, -0.5);
    AngularMomentum {
        jx: SpinMatrix::from_matrix(j, jx),
        jy: SpinMatrix::from_matrix(j, jy),
        jz: SpinMatrix::from_matrix(j, jz),
    }
}

/// `exp(i theta H)` for Hermitian `H`, via the eigendecomposition of `H`.
pub fn mat_exp_skew(h: &SpinMatrix, theta: f64) -> Result<SpinMatrix> {
    let herm = h.hermiticity_error();
    if herm > HERMITIAN_TOL {
        return Err(Error::NonHermitian(herm));
    }
    let dim = h.dim();
    if h.is_diagonal() {
        let diag =
            DVector::from_iterator(dim, (0..dim).map(|k| Complex64::new(0.0, theta * h.matrix()[(k, k)].re).exp()));
        return Ok(SpinMatrix::from_matrix(h.spin(), DMatrix::from_diagonal(&diag)));
    }
    // symmetrize so the solver sees an exactly Hermitian input
    let sym = (h.matrix() + h.matrix().adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let phases =
        DVector::from_iterator(dim, eig.eigenvalues.iter().map(|&lambda| Complex64::new(0.0, theta * lambda).exp()));
    let v = &eig.eigenvectors;
    let data = v * DMatrix::from_diagonal(&phases) * v.adjoint();
    Ok(SpinMatrix::from_matrix(h.spin(), data))
}

/// Wigner small-d element `<j mp| exp(-i 2 xi J_y) |j m>`.
///
/// The rotation angle is `2 xi`, so the half-angle trigonometric factors are
/// `cos xi` and `sin xi`. The summation index runs over every integer for
/// which all four factorial arguments are nonnegative.
pub fn wigner_small_d(j: HalfInt, mp: HalfInt, m: HalfInt, xi: f64) -> Result<f64> {
    check_projection(j, mp)?;
    check_projection(j, m)?;
    if j.twice() > MAX_TWO_J {
        return Err(Error::SpinTooLarge(j));
    }
    let j_plus_m = j.plus(m);
    let j_minus_m = j.plus(-m);
    let j_plus_mp = j.plus(mp);
    let j_minus_mp = j.plus(-mp);
    // mp - m as an integer
    let shift = (mp.twice() - m.twice()) / 2;

    let norm = (factorial(j_plus_mp as u32)
        * factorial(j_minus_mp as u32)
        * factorial(j_plus_m as u32)
        * factorial(j_minus_m as u32))
    .sqrt();
    let (c, s) = (xi.cos(), xi.sin());
    let two_j = j.twice();

    let k_lo = 0.max(-shift);
    let k_hi = j_plus_m.min(j_minus_mp);
    let mut sum = 0.0;
    for k in k_lo..=k_hi {
        let denom = factorial((j_plus_m - k) as u32)
            * factorial(k as u32)
            * factorial((j_minus_mp - k) as u32)
            * factorial((k + shift) as u32);
        let sign = if (k + shift).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        let cos_exp = two_j - 2 * k - shift;
        let sin_exp = 2 * k + shift;
        sum += sign * c.powi(cos_exp) * s.powi(sin_exp) / denom;
    }
    Ok(norm * sum)
}

/// Chebyshev polynomial of the first kind by three-term recurrence.
pub fn chebyshev_t(n: u32, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut prev, mut cur) = (1.0, x);
            for _ in 1..n {
                let next = 2.0 * x * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}
