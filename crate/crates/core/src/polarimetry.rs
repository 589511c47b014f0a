//! Forward model of the two-flipper single-beam polarimeter.
//!
//! The incoming `|jm>` is flipped by `exp(-i pi/2 Jy)`, picks up the guide
//! field phase, evolves under `U`, has the guide phase undone, is flipped back
//! by `exp(i pi/2 Jy)` and is analyzed in the `|jm'>` channel. Every channel
//! intensity is a polynomial in the spin-1/2 intensity
//! `x = cos^2(xi) cos^2(delta) + sin^2(xi) sin^2(zeta - phi)`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{so3_unitary, SuTwoParams};
use crate::spin_algebra::{
    angular_momentum_ops, binomial, check_projection, factorial, mat_exp_skew, projections, HalfInt, SpinMatrix,
    MAX_TWO_J,
};

/// Uniform guide field along z; translating the flipper pair by `x` shifts
/// the applied phase by `|mu B| x / v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuideField {
    /// Field strength in tesla (signed).
    pub b_field: f64,
    /// Magnetic moment in J/T.
    pub moment: f64,
    /// Particle speed in m/s.
    pub speed: f64,
    /// Flipper separation order `n` in `L0 = n pi v / |mu B|`.
    pub order: u32,
}

impl GuideField {
    pub fn new(b_field: f64, moment: f64, speed: f64, order: u32) -> Result<Self> {
        if !(b_field.is_finite() && b_field != 0.0) {
            return Err(Error::InvalidGuideField(format!("B must be finite and nonzero, got {b_field}")));
        }
        if !(moment.is_finite() && moment != 0.0) {
            return Err(Error::InvalidGuideField(format!("mu must be finite and nonzero, got {moment}")));
        }
        if !(speed.is_finite() && speed > 0.0) {
            return Err(Error::InvalidGuideField(format!("v must be positive, got {speed}")));
        }
        if order == 0 {
            return Err(Error::InvalidGuideField("n must be a positive integer".into()));
        }
        Ok(Self { b_field, moment, speed, order })
    }

    /// Larmor phase rate per unit length, `|mu B| / v`.
    fn rate(&self) -> f64 {
        (self.moment * self.b_field).abs() / self.speed
    }

    /// Flipper separation `L0 = n pi v / |mu B|`.
    pub fn separation(&self) -> f64 {
        f64::from(self.order) * PI / self.rate()
    }

    pub fn phase_shift(&self, translation: f64) -> f64 {
        self.rate() * translation
    }

    pub fn translation_for(&self, phi: f64) -> f64 {
        phi / self.rate()
    }
}

/// `cos^2 xi cos^2 delta + sin^2 xi sin^2(zeta - phi)`.
pub fn spin_half_intensity(p: &SuTwoParams, phi: f64) -> f64 {
    let (cx, sx) = (p.xi.cos(), p.xi.sin());
    let cd = p.delta.cos();
    let sz = (p.zeta - phi).sin();
    cx * cx * cd * cd + sx * sx * sz * sz
}

/// `exp(i pi/2 Jy) exp(-i phi Jz) U exp(i phi Jz) exp(-i pi/2 Jy)`.
///
/// The guide-field conjugation carries the sign for which the spin-1/2
/// channel reproduces [`spin_half_intensity`], whose extremes sit at
/// `phi = zeta` and `phi = zeta + pi/2`.
pub fn sandwich_unitary(j: HalfInt, p: &SuTwoParams, phi: f64) -> SpinMatrix {
    let ops = angular_momentum_ops(j);
    let flip_back = mat_exp_skew(&ops.jy, FRAC_PI_2).expect("Jy is Hermitian");
    let flip_in = mat_exp_skew(&ops.jy, -FRAC_PI_2).expect("Jy is Hermitian");
    let guide_out = mat_exp_skew(&ops.jz, -phi).expect("Jz is Hermitian");
    let guide_in = mat_exp_skew(&ops.jz, phi).expect("Jz is Hermitian");
    let u = so3_unitary(j, p);
    let inner = &(&guide_out * &u) * &guide_in;
    &(&flip_back * &inner) * &flip_in
}

/// One term `coefficient * x^x_power * (1-x)^y_power` of the inner sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelTerm {
    pub nu: i32,
    pub coefficient: f64,
    pub x_power: i32,
    pub y_power: i32,
}

/// Channel intensity as a function of the spin-1/2 intensity `x`:
///
/// `I(x) = prefactor * x^[half_x] * (1-x)^[half_y] * (sum_nu c_nu x^p_nu (1-x)^q_nu)^2`
///
/// where the bracketed powers are 1 when the corresponding exponent of the
/// unsquared sum carries a common half-integer offset, 0 otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPolynomial {
    pub j: HalfInt,
    pub m: HalfInt,
    pub mp: HalfInt,
    pub prefactor: f64,
    pub terms: Vec<ChannelTerm>,
    pub half_x: bool,
    pub half_y: bool,
}

impl ChannelPolynomial {
    fn inner(&self, x: f64) -> f64 {
        let y = 1.0 - x;
        self.terms.iter().map(|t| t.coefficient * x.powi(t.x_power) * y.powi(t.y_power)).sum()
    }

    fn inner_derivative(&self, x: f64) -> f64 {
        let y = 1.0 - x;
        self.terms
            .iter()
            .map(|t| {
                let (p, q) = (t.x_power, t.y_power);
                let dx = if p > 0 { f64::from(p) * x.powi(p - 1) * y.powi(q) } else { 0.0 };
                let dy = if q > 0 { f64::from(q) * x.powi(p) * y.powi(q - 1) } else { 0.0 };
                t.coefficient * (dx - dy)
            })
            .sum()
    }

    fn offset(&self, x: f64) -> (f64, f64) {
        let y = 1.0 - x;
        match (self.half_x, self.half_y) {
            (false, false) => (1.0, 0.0),
            (true, false) => (x, 1.0),
            (false, true) => (y, -1.0),
            (true, true) => (x * y, 1.0 - 2.0 * x),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let r = self.inner(x);
        self.prefactor * self.offset(x).0 * r * r
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let r = self.inner(x);
        let dr = self.inner_derivative(x);
        let (g, dg) = self.offset(x);
        self.prefactor * (dg * r * r + 2.0 * g * r * dr)
    }

    /// Monomial coefficients of the expanded polynomial, lowest degree first.
    pub fn monomial_coefficients(&self) -> Vec<f64> {
        fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
            let mut out = vec![0.0; a.len() + b.len() - 1];
            for (i, &ai) in a.iter().enumerate() {
                for (k, &bk) in b.iter().enumerate() {
                    out[i + k] += ai * bk;
                }
            }
            out
        }
        fn pow(base: &[f64], e: i32) -> Vec<f64> {
            (0..e).fold(vec![1.0], |acc, _| mul(&acc, base))
        }
        let x = [0.0, 1.0];
        let y = [1.0, -1.0];
        let mut inner = vec![0.0];
        for t in &self.terms {
            let term = mul(&pow(&x, t.x_power), &pow(&y, t.y_power));
            if term.len() > inner.len() {
                inner.resize(term.len(), 0.0);
            }
            for (k, c) in term.iter().enumerate() {
                inner[k] += t.coefficient * c;
            }
        }
        let mut full = mul(&inner, &inner);
        if self.half_x {
            full = mul(&full, &x);
        }
        if self.half_y {
            full = mul(&full, &y);
        }
        for c in &mut full {
            *c *= self.prefactor;
        }
        while full.len() > 1 && full.last() == Some(&0.0) {
            full.pop();
        }
        full
    }

    /// Copy with the leading inner coefficient perturbed; a negative control
    /// for the verification suites.
    #[doc(hidden)]
    pub fn corrupted(&self) -> Self {
        let mut out = self.clone();
        if let Some(t) = out.terms.first_mut() {
            t.coefficient += 1e-3;
        }
        out
    }
}

/// Symbolic channel polynomial for input `|jm>` analyzed in `|jm'>`.
///
/// The summation index runs over all integers `nu` with `0 <= nu <= j+m` and
/// `0 <= j+m'-nu <= j-m`.
pub fn channel_polynomial(j: HalfInt, m: HalfInt, mp: HalfInt) -> Result<ChannelPolynomial> {
    check_projection(j, m)?;
    check_projection(j, mp)?;
    if j.twice() > MAX_TWO_J {
        return Err(Error::SpinTooLarge(j));
    }
    let j_plus_m = j.plus(m);
    let j_minus_m = j.plus(-m);
    let j_plus_mp = j.plus(mp);
    let j_minus_mp = j.plus(-mp);
    // m + m' as an integer
    let msum = (m.twice() + mp.twice()) / 2;

    let lo = 0.max(j_plus_mp - j_minus_m);
    let hi = j_plus_m.min(j_plus_mp);
    let mut terms = Vec::new();
    for nu in lo..=hi {
        let a_exp = 2 * nu - msum;
        let b_exp = j.twice() + msum - 2 * nu;
        debug_assert!(a_exp >= 0 && b_exp >= 0);
        let sign = if nu % 2 == 0 { 1.0 } else { -1.0 };
        terms.push(ChannelTerm {
            nu,
            coefficient: sign * binomial(j_plus_m, nu) * binomial(j_minus_m, j_plus_mp - nu),
            x_power: a_exp / 2,
            y_power: b_exp / 2,
        });
    }
    let half_x = msum.rem_euclid(2) == 1;
    let half_y = (j.twice() + msum).rem_euclid(2) == 1;
    let prefactor = factorial(j_plus_mp as u32) * factorial(j_minus_mp as u32)
        / (factorial(j_plus_m as u32) * factorial(j_minus_m as u32));
    Ok(ChannelPolynomial { j, m, mp, prefactor, terms, half_x, half_y })
}

/// Intensity in channel `mp` for input `m`, through the channel polynomial.
pub fn intensity(j: HalfInt, m: HalfInt, mp: HalfInt, p: &SuTwoParams, phi: f64) -> Result<f64> {
    Ok(channel_polynomial(j, m, mp)?.eval(spin_half_intensity(p, phi)))
}

/// Uniform grid `start + k * period / points`, `k = 0 .. points-1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub points: usize,
    pub start: f64,
    pub period: f64,
}

impl Default for ScanGrid {
    fn default() -> Self {
        Self { points: 360, start: 0.0, period: PI }
    }
}

impl ScanGrid {
    pub fn with_points(points: usize) -> Self {
        Self { points, ..Self::default() }
    }

    pub fn phis(&self) -> Vec<f64> {
        (0..self.points).map(|k| self.start + self.period * k as f64 / self.points as f64).collect()
    }
}

/// Sampled channel intensities versus the applied phase shift.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntensityProfile {
    pub phi: Vec<f64>,
    /// Intensity samples keyed by analyzer channel `m'`.
    pub channels: BTreeMap<HalfInt, Vec<f64>>,
    /// Detector counts, when the profile comes from a finite-count run.
    pub counts: Option<BTreeMap<HalfInt, Vec<u64>>>,
    pub total_counts_per_point: Option<u64>,
    /// Flipper-pair positions for each grid point, when a guide field is set.
    pub translations: Option<Vec<f64>>,
}

impl IntensityProfile {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn channel_keys(&self) -> Vec<HalfInt> {
        self.channels.keys().copied().collect()
    }

    /// Copy restricted to the given channels; errors if one is missing.
    pub fn select(&self, channels: &[HalfInt]) -> Result<IntensityProfile> {
        let mut out = IntensityProfile {
            phi: self.phi.clone(),
            total_counts_per_point: self.total_counts_per_point,
            translations: self.translations.clone(),
            ..Default::default()
        };
        let mut counts = self.counts.as_ref().map(|_| BTreeMap::new());
        for &c in channels {
            let samples = self
                .channels
                .get(&c)
                .ok_or_else(|| Error::Profile(format!("channel 2m'={} not present", c.twice())))?;
            out.channels.insert(c, samples.clone());
            if let (Some(dst), Some(src)) = (counts.as_mut(), self.counts.as_ref()) {
                if let Some(v) = src.get(&c) {
                    dst.insert(c, v.clone());
                }
            }
        }
        out.counts = counts;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::EmptyChannels);
        }
        for (c, v) in &self.channels {
            if v.len() != self.phi.len() {
                return Err(Error::Profile(format!(
                    "channel 2m'={} has {} samples for {} grid points",
                    c.twice(),
                    v.len(),
                    self.phi.len()
                )));
            }
        }
        if self.phi.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Profile("phi grid is not strictly ascending".into()));
        }
        Ok(())
    }
}

/// Ideal channel intensities over a phase-shift grid.
pub fn scan(
    j: HalfInt,
    m: HalfInt,
    p: &SuTwoParams,
    guide: Option<&GuideField>,
    grid: &ScanGrid,
    channels: &[HalfInt],
) -> Result<IntensityProfile> {
    if channels.is_empty() {
        return Err(Error::EmptyChannels);
    }
    if grid.points < 1 || grid.period < PI * (1.0 - 1e-12) {
        return Err(Error::Domain("scan grid must cover at least one period [0, pi)".into()));
    }
    let phis = grid.phis();
    let xs: Vec<f64> = phis.iter().map(|&phi| spin_half_intensity(p, phi)).collect();
    let mut profile = IntensityProfile {
        translations: guide.map(|g| phis.iter().map(|&phi| g.translation_for(phi)).collect()),
        phi: phis,
        ..Default::default()
    };
    for &mp in channels {
        let cp = channel_polynomial(j, m, mp)?;
        profile.channels.insert(mp, xs.iter().map(|&x| cp.eval(x)).collect());
    }
    Ok(profile)
}

/// Every analyzer channel of spin `j`, descending.
pub fn all_channels(j: HalfInt) -> Vec<HalfInt> {
    projections(j).collect()
}

/// Draws detector counts for every grid point: `n_per_point` particles are
/// distributed multinomially over the profile's channels plus an implicit
/// bucket for unmeasured channels. Intensities are replaced by count
/// fractions.
pub fn simulate_counts(profile: &IntensityProfile, n_per_point: u64, seed: u64) -> Result<IntensityProfile> {
    if n_per_point < 1 {
        return Err(Error::Domain("counts per point must be at least 1".into()));
    }
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys = profile.channel_keys();
    let mut counts: BTreeMap<HalfInt, Vec<u64>> =
        keys.iter().map(|&k| (k, Vec::with_capacity(profile.len()))).collect();

    for i in 0..profile.len() {
        let probs: Vec<f64> = keys.iter().map(|k| profile.channels[k][i].clamp(0.0, 1.0)).collect();
        let complete = (probs.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        let mut remaining = n_per_point;
        let mut mass_left = 1.0f64;
        for (idx, (&k, &prob)) in keys.iter().zip(&probs).enumerate() {
            let drawn = if remaining == 0 {
                0
            } else if complete && idx + 1 == keys.len() {
                remaining
            } else {
                let q = if mass_left > 0.0 { (prob / mass_left).clamp(0.0, 1.0) } else { 1.0 };
                Binomial::new(remaining, q).map_err(|e| Error::Domain(format!("binomial draw: {e}")))?.sample(&mut rng)
            };
            remaining -= drawn;
            mass_left -= prob;
            counts.get_mut(&k).expect("key present").push(drawn);
        }
    }

    let n = n_per_point as f64;
    let channels = counts.iter().map(|(&k, v)| (k, v.iter().map(|&c| c as f64 / n).collect())).collect();
    Ok(IntensityProfile {
        phi: profile.phi.clone(),
        channels,
        counts: Some(counts),
        total_counts_per_point: Some(n_per_point),
        translations: profile.translations.clone(),
    })
}
