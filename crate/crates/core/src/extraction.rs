//! Recovery of the relative phase (modulo pi) and visibility from a phase
//! scan.
//!
//! The pipeline locates the pair of stationary phase shifts `pi/2` apart that
//! every channel shares, inverts each channel polynomial at both points to
//! candidate spin-1/2 intensities, keeps the candidates common to all
//! channels, and converts the spin-1/2 extremes into `cos^2 delta`,
//! `|cos xi|`, `cos^2 Phi` and the visibility.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, PipelineError, Result, Stage};
use crate::evolution::{visibility_polynomial, ZERO_VISIBILITY};
use crate::polarimetry::{channel_polynomial, ChannelPolynomial, IntensityProfile};
use crate::spin_algebra::{chebyshev_t, check_projection, HalfInt};

/// Default angular tolerance on the `pi/2` separation of an extremum pair.
pub const SEPARATION_TOL: f64 = 1e-3;
/// Default cross-channel matching tolerance on spin-1/2 intensities.
pub const MATCH_TOL: f64 = 5e-3;
/// Roots closer than this are one root.
pub const ROOT_MERGE: f64 = 1e-7;
/// Residual accepted for an ideal-data root.
pub const ROOT_RESIDUAL: f64 = 1e-9;
/// Bracketing grid for channel inversion.
pub const INVERSION_GRID: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremaOptions {
    pub separation_tol: f64,
    /// A channel whose peak-to-peak swing is below this is treated as flat.
    pub flat_tol: f64,
    /// Band limit (in harmonics of `2 phi`) used to smooth each channel
    /// before locating extrema. `None` works on the raw samples.
    pub harmonics: Option<usize>,
}

impl Default for ExtremaOptions {
    fn default() -> Self {
        Self { separation_tol: SEPARATION_TOL, flat_tol: 1e-9, harmonics: None }
    }
}

/// Two stationary phase shifts `pi/2` apart and every channel's intensity
/// there. Which of the two is `phi = zeta` is decided after inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremaPair {
    pub phi_a: f64,
    pub phi_b: f64,
    pub values_a: BTreeMap<HalfInt, f64>,
    pub values_b: BTreeMap<HalfInt, f64>,
    /// Every channel is flat: any pair is admissible.
    pub flat: bool,
    /// Largest angular distance of a supporting channel extremum from the pair.
    pub spread: f64,
}

/// Band-limited least-squares fit of one channel:
/// `c0 + sum_k (a_k cos 2k phi + b_k sin 2k phi)`, with the residual variance.
enum ChannelModel {
    Fourier { c0: f64, cos: Vec<f64>, sin: Vec<f64>, variance: f64 },
}

impl ChannelModel {
    fn eval(&self, phi: f64) -> f64 {
        match self {
            ChannelModel::Fourier { c0, cos, sin, .. } => {
                let mut v = *c0;
                for (k, (a, b)) in cos.iter().zip(sin).enumerate() {
                    let w = 2.0 * (k + 1) as f64 * phi;
                    v += a * w.cos() + b * w.sin();
                }
                v
            }
        }
    }

    /// First and second derivative.
    fn slope_curvature(&self, phi: f64) -> (f64, f64) {
        match self {
            ChannelModel::Fourier { cos, sin, .. } => {
                let (mut d1, mut d2) = (0.0, 0.0);
                for (k, (a, b)) in cos.iter().zip(sin).enumerate() {
                    let f = 2.0 * (k + 1) as f64;
                    let (s, c) = (f * phi).sin_cos();
                    d1 += f * (-a * s + b * c);
                    d2 += -f * f * (a * c + b * s);
                }
                (d1, d2)
            }
        }
    }
}

/// Least-squares fit of every channel to a trigonometric polynomial of the
/// given band limit in `2 phi`.
fn fourier_models(profile: &IntensityProfile, harmonics: usize) -> Result<BTreeMap<HalfInt, ChannelModel>> {
    let n = profile.len();
    let cols = 2 * harmonics + 1;
    if n < cols {
        return Err(Error::NoExtrema(format!("{n} grid points cannot resolve {harmonics} harmonics")));
    }
    let design = DMatrix::from_fn(n, cols, |r, c| {
        let phi = profile.phi[r];
        if c == 0 {
            1.0
        } else {
            let k = c.div_ceil(2) as f64;
            if c % 2 == 1 {
                (2.0 * k * phi).cos()
            } else {
                (2.0 * k * phi).sin()
            }
        }
    });
    let keys = profile.channel_keys();
    let rhs = DMatrix::from_fn(n, keys.len(), |r, c| profile.channels[&keys[c]][r]);
    let svd = design.clone().svd(true, true);
    let coeffs = svd.solve(&rhs, 1e-12).map_err(|e| Error::NoExtrema(e.to_string()))?;
    let residuals = &design * &coeffs - &rhs;
    let dof = (n - cols).max(1) as f64;
    Ok(keys
        .iter()
        .enumerate()
        .map(|(c, &k)| {
            let col = coeffs.column(c);
            let cos = (0..harmonics).map(|h| col[1 + 2 * h]).collect();
            let sin = (0..harmonics).map(|h| col[2 + 2 * h]).collect();
            let variance = residuals.column(c).norm_squared() / dof;
            (k, ChannelModel::Fourier { c0: col[0], cos, sin, variance })
        })
        .collect())
}

/// Vertex of the least-squares parabola through `(t_i, s_i)`, with its
/// value. `None` if the fit is degenerate or has no curvature.
fn quadratic_vertex(ts: &[f64], ss: &[f64]) -> Option<(f64, f64)> {
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for (&t, &s) in ts.iter().zip(ss) {
        let row = Vector3::new(1.0, t, t * t);
        ata += row * row.transpose();
        atb += row * s;
    }
    let coef = ata.lu().solve(&atb)?;
    if coef[2] == 0.0 {
        return None;
    }
    let t = -coef[1] / (2.0 * coef[2]);
    Some((t, coef[0] + coef[1] * t + coef[2] * t * t))
}

fn quadratic_value(ts: &[f64], ss: &[f64], at: f64) -> f64 {
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for (&t, &s) in ts.iter().zip(ss) {
        let row = Vector3::new(1.0, t, t * t);
        ata += row * row.transpose();
        atb += row * s;
    }
    match ata.lu().solve(&atb) {
        Some(c) => c[0] + c[1] * at + c[2] * at * at,
        None => ss[ss.len() / 2],
    }
}

/// A sampled, possibly periodic, channel curve.
struct Curve<'a> {
    phi: &'a [f64],
    values: Vec<f64>,
    /// Period of the grid when it closes on itself.
    period: Option<f64>,
}

impl Curve<'_> {
    fn len(&self) -> usize {
        self.phi.len()
    }

    /// Five-point neighbourhood around `i` as offsets from `phi[i]`.
    fn window(&self, i: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.len() as isize;
        let mut ts = Vec::with_capacity(5);
        let mut ss = Vec::with_capacity(5);
        for off in -2isize..=2 {
            let k = i as isize + off;
            let (idx, shift) = match self.period {
                Some(p) => (k.rem_euclid(n) as usize, p * k.div_euclid(n) as f64),
                None if (0..n).contains(&k) => (k as usize, 0.0),
                None => continue,
            };
            ts.push(self.phi[idx] + shift - self.phi[i]);
            ss.push(self.values[idx]);
        }
        (ts.len() >= 3).then_some((ts, ss))
    }

    /// Indices of strict discrete local extrema.
    fn extremum_indices(&self) -> Vec<usize> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            let (prev, next) = match self.period {
                Some(_) => ((i + n - 1) % n, (i + 1) % n),
                None if i == 0 || i + 1 == n => continue,
                None => (i - 1, i + 1),
            };
            let (a, b, c) = (self.values[prev], self.values[i], self.values[next]);
            if (b > a && b >= c) || (b < a && b <= c) {
                out.push(i);
            }
        }
        out
    }

    /// Value at `phi`, from a quadratic fit over the five nearest samples.
    fn value_at(&self, phi: f64) -> f64 {
        let i = self
            .phi
            .iter()
            .enumerate()
            .min_by(|a, b| {
                circular_distance(*a.1, phi, self.period.unwrap_or(f64::INFINITY)).total_cmp(&circular_distance(
                    *b.1,
                    phi,
                    self.period.unwrap_or(f64::INFINITY),
                ))
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut delta = phi - self.phi[i];
        if let Some(p) = self.period {
            delta -= p * (delta / p).round();
        }
        match self.window(i) {
            Some((ts, ss)) => quadratic_value(&ts, &ss, delta),
            None => self.values[i],
        }
    }
}

fn circular_distance(a: f64, b: f64, period: f64) -> f64 {
    if !period.is_finite() {
        return (a - b).abs();
    }
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

/// Detects whether a grid closes on itself after a whole number of half
/// turns, returning that period.
fn grid_period(phi: &[f64]) -> Option<f64> {
    let n = phi.len();
    let step = (phi[n - 1] - phi[0]) / (n - 1) as f64;
    let span = phi[n - 1] - phi[0] + step;
    let turns = (span / PI).round();
    let uniform = phi.windows(2).all(|w| ((w[1] - w[0]) - step).abs() <= 1e-6 * step.max(1e-12));
    (turns >= 1.0 && uniform && (span - turns * PI).abs() <= 1e-6).then_some(turns * PI)
}

/// One polished channel extremum.
#[derive(Debug, Clone, Copy)]
struct Hit {
    channel: HalfInt,
    phi: f64,
    /// Inverse variance of `phi`.
    weight: f64,
}

/// Locates the shared stationary pair `(phi_a, phi_a + pi/2)`.
pub fn find_extrema(profile: &IntensityProfile, opts: &ExtremaOptions) -> Result<ExtremaPair> {
    profile.validate()?;
    let n = profile.len();
    if n < 8 {
        return Err(Error::NoExtrema(format!("profile has {n} points; at least 8 are needed")));
    }
    let step = (profile.phi[n - 1] - profile.phi[0]) / (n - 1) as f64;
    if profile.phi[n - 1] - profile.phi[0] + step < PI * (1.0 - 1e-6) {
        return Err(Error::NoExtrema("profile does not cover a full period of pi".into()));
    }

    let models = match opts.harmonics {
        Some(k) => Some(fourier_models(profile, k)?),
        None => None,
    };

    // curves on which extrema are searched
    let dense_phi: Vec<f64>;
    let mut curves: BTreeMap<HalfInt, Curve> = BTreeMap::new();
    match &models {
        Some(models) => {
            let pts = n.max(360);
            dense_phi = (0..pts).map(|k| PI * k as f64 / pts as f64).collect();
            for (&key, model) in models {
                let values = dense_phi.iter().map(|&p| model.eval(p)).collect();
                curves.insert(key, Curve { phi: &dense_phi, values, period: Some(PI) });
            }
        }
        None => {
            let period = grid_period(&profile.phi);
            for (&key, samples) in &profile.channels {
                curves.insert(key, Curve { phi: &profile.phi, values: samples.clone(), period });
            }
        }
    }

    let swing = |c: &Curve| {
        let lo = c.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    // each channel is read at its own stationary point next to the pair
    let value_at = |key: &HalfInt, phi: f64| -> f64 {
        match &models {
            Some(m) => m[key].eval(newton_stationary(&m[key], phi, opts.separation_tol)),
            None => curves[key].value_at(phi),
        }
    };

    let active: Vec<HalfInt> = curves.iter().filter(|(_, c)| swing(c) > opts.flat_tol).map(|(k, _)| *k).collect();
    if active.is_empty() {
        let phi_a = profile.phi[0];
        let phi_b = phi_a + FRAC_PI_2;
        let values_a = curves.keys().map(|&k| (k, value_at(&k, phi_a))).collect();
        let values_b = curves.keys().map(|&k| (k, value_at(&k, phi_b))).collect();
        return Ok(ExtremaPair { phi_a, phi_b, values_a, values_b, flat: true, spread: 0.0 });
    }

    let mut hits = Vec::new();
    for key in &active {
        let curve = &curves[key];
        for i in curve.extremum_indices() {
            let mut phi = curve.phi[i];
            if let Some((ts, ss)) = curve.window(i) {
                if let Some((t, _)) = quadratic_vertex(&ts, &ss) {
                    let h = ts.iter().fold(0.0f64, |a, &t| a.max(t.abs()));
                    if t.abs() <= h {
                        phi += t;
                    }
                }
            }
            let mut weight = 1.0;
            if let Some(models) = &models {
                let model = &models[key];
                phi = newton_stationary(model, phi, 2.0 * PI / curve.len() as f64);
                let ChannelModel::Fourier { variance, .. } = model;
                let (_, curvature) = model.slope_curvature(phi);
                weight = curvature * curvature / variance.max(1e-30);
            }
            hits.push(Hit { channel: *key, phi, weight });
        }
    }

    let (center, members) = best_cluster(&hits, opts.separation_tol)
        .ok_or_else(|| Error::NoExtrema("no channel extremum has a partner pi/2 away".into()))?;

    let origin = profile.phi[0];
    let phi_a = origin + (center - origin).rem_euclid(FRAC_PI_2);
    let phi_b = phi_a + FRAC_PI_2;
    let spread = members.iter().map(|h| circular_distance(h.phi, phi_a, FRAC_PI_2)).fold(0.0, f64::max);
    let values_a = curves.keys().map(|&k| (k, value_at(&k, phi_a))).collect();
    let values_b = curves.keys().map(|&k| (k, value_at(&k, phi_b))).collect();
    Ok(ExtremaPair { phi_a, phi_b, values_a, values_b, flat: false, spread })
}

fn newton_stationary(model: &ChannelModel, start: f64, max_move: f64) -> f64 {
    let mut phi = start;
    for _ in 0..20 {
        let (d1, d2) = model.slope_curvature(phi);
        if d2 == 0.0 {
            break;
        }
        let next = phi - d1 / d2;
        if (next - start).abs() > max_move {
            return phi;
        }
        let done = (next - phi).abs() < 1e-15;
        phi = next;
        if done {
            break;
        }
    }
    phi
}

/// Groups extrema modulo `pi/2` and returns the best-supported group: most
/// channels with extrema at both members of the pair, then most hits, then
/// the tightest spread.
fn best_cluster(hits: &[Hit], tol: f64) -> Option<(f64, Vec<Hit>)> {
    type Score = (usize, usize, f64);
    let mut best: Option<(Score, f64, Vec<Hit>)> = None;
    for seed in hits {
        let members: Vec<Hit> =
            hits.iter().copied().filter(|h| circular_distance(h.phi, seed.phi, FRAC_PI_2) <= tol).collect();
        // circular mean on the pi/2 circle
        let (s, c) = members.iter().fold((0.0, 0.0), |(s, c), h| {
            let w = 4.0 * h.phi;
            (s + h.weight * w.sin(), c + h.weight * w.cos())
        });
        let center = f64::atan2(s, c) / 4.0;
        let mut sides: BTreeMap<HalfInt, [bool; 2]> = BTreeMap::new();
        for h in &members {
            let side = (((h.phi - center) / FRAC_PI_2).round() as i64).rem_euclid(2) as usize;
            sides.entry(h.channel).or_default()[side] = true;
        }
        let paired = sides.values().filter(|s| s[0] && s[1]).count();
        if paired == 0 {
            continue;
        }
        let spread = members.iter().map(|h| circular_distance(h.phi, center, FRAC_PI_2)).fold(0.0, f64::max);
        let score = (paired, members.len(), spread);
        let better = match &best {
            None => true,
            Some((s, _, _)) => {
                score.0 > s.0 || (score.0 == s.0 && (score.1 > s.1 || (score.1 == s.1 && score.2 < s.2)))
            }
        };
        if better {
            best = Some((score, center, members));
        }
    }
    best.map(|(_, c, m)| (c, m))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvertOptions {
    pub grid: usize,
    /// Largest `|cp(x) - target|` accepted at a tangential root; also how far
    /// a target may exceed the channel range before it is rejected.
    pub allowance: f64,
    pub merge: f64,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self { grid: INVERSION_GRID, allowance: ROOT_RESIDUAL, merge: ROOT_MERGE }
    }
}

/// All `x` in `[0, 1]` with `cp(x) = target`.
pub fn invert_channel(cp: &ChannelPolynomial, target: f64) -> Result<Vec<f64>> {
    invert_channel_with(cp, target, &InvertOptions::default())
}

pub fn invert_channel_with(cp: &ChannelPolynomial, target: f64, opts: &InvertOptions) -> Result<Vec<f64>> {
    let no_solution = Error::NoSolution { channel: cp.mp.twice(), target };
    let allowance = opts.allowance.max(ROOT_RESIDUAL);
    if !target.is_finite() || target < -allowance || target > 1.0 + allowance {
        return Err(no_solution);
    }
    let t = target.clamp(0.0, 1.0);
    let f = |x: f64| cp.eval(x) - t;
    let n = opts.grid.max(8);
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
            roots.push(bracketed_root(cp, t, xs[i], xs[i + 1]));
        }
    }
    // tangential roots: local minima of |f| without a sign change
    for i in 0..=n {
        let here = fs[i].abs();
        if here == 0.0 {
            continue;
        }
        let left_ok = i == 0 || (fs[i - 1].abs() >= here && (fs[i - 1] < 0.0) == (fs[i] < 0.0));
        let right_ok = i == n || (fs[i + 1].abs() >= here && (fs[i + 1] < 0.0) == (fs[i] < 0.0));
        if !(left_ok && right_ok) {
            continue;
        }
        let lo = xs[i.saturating_sub(1)];
        let hi = xs[(i + 1).min(n)];
        let x = stationary_point(cp, lo, hi).unwrap_or(xs[i]);
        let fx = f(x);
        if fx == 0.0 {
            roots.push(x);
        } else if (fx < 0.0) != (fs[i] < 0.0) {
            // the curve dips through the target and back within one cell
            for (a, b, outer) in [(lo, x, lo), (x, hi, hi)] {
                if (f(outer) < 0.0) != (fx < 0.0) {
                    roots.push(bracketed_root(cp, t, a, b));
                }
            }
        } else if fx.abs() <= allowance {
            roots.push(x);
        }
    }

    roots.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = Vec::with_capacity(roots.len());
    for r in roots {
        match merged.last() {
            Some(&last) if r - last < opts.merge => {}
            _ => merged.push(r),
        }
    }
    if merged.is_empty() {
        return Err(no_solution);
    }
    Ok(merged)
}

/// Bisection on a sign-change bracket, finished with guarded Newton steps.
fn bracketed_root(cp: &ChannelPolynomial, t: f64, mut lo: f64, mut hi: f64) -> f64 {
    let f = |x: f64| cp.eval(x) - t;
    let lo_neg = f(lo) < 0.0;
    for _ in 0..60 {
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
    let mut x = 0.5 * (lo + hi);
    for _ in 0..3 {
        let d = cp.derivative(x);
        if d == 0.0 {
            break;
        }
        let next = x - f(x) / d;
        if !(lo..=hi).contains(&next) || f(next).abs() >= f(x).abs() {
            break;
        }
        x = next;
    }
    x
}

/// Stationary point of `cp` inside `[lo, hi]` by bisection on the sign of
/// the derivative; `None` if the derivative keeps its sign.
fn stationary_point(cp: &ChannelPolynomial, mut lo: f64, mut hi: f64) -> Option<f64> {
    let (dl, dh) = (cp.derivative(lo), cp.derivative(hi));
    if dl == 0.0 {
        return Some(lo);
    }
    if dh == 0.0 {
        return Some(hi);
    }
    if (dl < 0.0) == (dh < 0.0) {
        return None;
    }
    let lo_neg = dl < 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (cp.derivative(mid) < 0.0) == lo_neg {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Inversion candidates of one channel at one extremum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelCandidates {
    #[serde(rename = "channel_2mp")]
    pub channel: HalfInt,
    pub target: f64,
    pub roots: Vec<f64>,
    /// Standard deviation of `target` (0 for ideal data).
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOptions {
    /// Agreement required between candidates of different channels on ideal
    /// data; also the radius within which survivors are one solution.
    pub tolerance: f64,
    /// Noisy data: a point survives when every channel's residual is within
    /// this many standard deviations of its target.
    pub noise_sigmas: f64,
    /// Noisy data: how far least-squares refinement may move a seed.
    pub search_radius: f64,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self { tolerance: MATCH_TOL, noise_sigmas: 5.0, search_radius: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub x_at_a: f64,
    pub x_at_b: f64,
    pub x_min: f64,
    pub x_max: f64,
}

/// The unique spin-1/2 intensity consistent with every channel at one phase
/// shift.
///
/// Ideal data: candidates of all channels must agree within the tolerance.
/// Noisy data: every candidate seeds a weighted least-squares fit, and the
/// fitted point must explain each channel within its noise.
pub fn match_point(
    candidates: &[ChannelCandidates],
    polys: &BTreeMap<HalfInt, ChannelPolynomial>,
    opts: &MatchOptions,
    at: &str,
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::EmptyChannels);
    }
    let mut survivors: Vec<(f64, f64)> = Vec::new();
    let mut keep = |x: f64, cost: f64| match survivors.iter_mut().find(|(s, _)| (*s - x).abs() <= opts.tolerance) {
        Some(existing) if cost < existing.1 => *existing = (x, cost),
        Some(_) => {}
        None => survivors.push((x, cost)),
    };

    if candidates.iter().any(|c| c.noise > 0.0) {
        for seed in candidates.iter().flat_map(|c| c.roots.iter().copied()) {
            let x = refine_least_squares(candidates, polys, seed, opts.search_radius);
            let worst = candidates
                .iter()
                .map(|c| (polys[&c.channel].eval(x) - c.target).abs() / c.noise.max(ROOT_RESIDUAL))
                .fold(0.0, f64::max);
            if worst <= opts.noise_sigmas {
                keep(x, weighted_cost(candidates, polys, x));
            }
        }
    } else {
        let anchor =
            candidates.iter().enumerate().min_by_key(|(_, c)| c.roots.len()).map(|(i, _)| i).expect("nonempty");
        'roots: for &r in &candidates[anchor].roots {
            let mut group = vec![r];
            for (i, other) in candidates.iter().enumerate() {
                if i == anchor {
                    continue;
                }
                let nearest = other
                    .roots
                    .iter()
                    .copied()
                    .filter(|&x| (x - r).abs() <= opts.tolerance)
                    .min_by(|a, b| (a - r).abs().total_cmp(&(b - r).abs()));
                match nearest {
                    Some(x) => group.push(x),
                    None => continue 'roots,
                }
            }
            let start = group.iter().sum::<f64>() / group.len() as f64;
            let x = refine_least_squares(candidates, polys, start, opts.tolerance);
            keep(x, weighted_cost(candidates, polys, x));
        }
    }

    match survivors.len() {
        0 => Err(Error::Inconsistent { at: at.to_string() }),
        1 => Ok(survivors[0].0),
        _ => {
            let mut xs: Vec<f64> = survivors.iter().map(|s| s.0).collect();
            xs.sort_by(f64::total_cmp);
            Err(Error::Ambiguous { at: at.to_string(), survivors: xs })
        }
    }
}

fn weight(c: &ChannelCandidates) -> f64 {
    1.0 / (c.noise * c.noise + 1e-24)
}

fn weighted_cost(candidates: &[ChannelCandidates], polys: &BTreeMap<HalfInt, ChannelPolynomial>, x: f64) -> f64 {
    candidates.iter().map(|c| weight(c) * (polys[&c.channel].eval(x) - c.target).powi(2)).sum()
}

/// Minimizes `sum_k w_k (P_k(x) - t_k)^2` near `start` by Gauss-Newton,
/// confined to `[start - radius, start + radius]`.
fn refine_least_squares(
    candidates: &[ChannelCandidates],
    polys: &BTreeMap<HalfInt, ChannelPolynomial>,
    start: f64,
    radius: f64,
) -> f64 {
    let lo = (start - radius).max(0.0);
    let hi = (start + radius).min(1.0);
    let cost = |x: f64| weighted_cost(candidates, polys, x);
    let mut x = start.clamp(lo, hi);
    for _ in 0..50 {
        let (mut num, mut den) = (0.0, 0.0);
        for c in candidates {
            let cp = &polys[&c.channel];
            let (r, d) = (cp.eval(x) - c.target, cp.derivative(x));
            num += weight(c) * r * d;
            den += weight(c) * d * d;
        }
        if den == 0.0 {
            break;
        }
        let next = (x - num / den).clamp(lo, hi);
        if cost(next) > cost(x) {
            break;
        }
        let done = (next - x).abs() < 1e-16;
        x = next;
        if done {
            break;
        }
    }
    x
}

/// Matches candidates independently at both extrema of the pair.
pub fn match_channels(
    at_a: &[ChannelCandidates],
    at_b: &[ChannelCandidates],
    polys: &BTreeMap<HalfInt, ChannelPolynomial>,
    opts: &MatchOptions,
) -> Result<MatchedPair> {
    let x_at_a = match_point(at_a, polys, opts, "phi_a")?;
    let x_at_b = match_point(at_b, polys, opts, "phi_b")?;
    Ok(MatchedPair { x_at_a, x_at_b, x_min: x_at_a.min(x_at_b), x_max: x_at_a.max(x_at_b) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryMethod {
    /// Spin-1/2 extremes supplied directly.
    Direct,
    PolynomialMatching,
    SpinCoherentClosedForm,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AmbiguityReport {
    pub flagged: bool,
    pub description: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub extrema_us: u64,
    pub inversion_us: u64,
    pub matching_us: u64,
    pub recovery_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremaSummary {
    pub phi_a: f64,
    pub phi_b: f64,
    /// The member of the pair where the spin-1/2 intensity is smallest.
    pub phi_zeta: f64,
    pub flat: bool,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub at: String,
    pub phi: f64,
    #[serde(flatten)]
    pub candidates: ChannelCandidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    #[serde(rename = "two_j")]
    pub j: HalfInt,
    #[serde(rename = "two_m")]
    pub m: HalfInt,
    pub method: RecoveryMethod,
    pub x_min: f64,
    pub x_max: f64,
    /// `None` at spin flip, where `1 - x_max + x_min` vanishes.
    pub cos2_delta: Option<f64>,
    pub abs_cos_xi: f64,
    pub cos2_phi: Option<f64>,
    pub visibility: f64,
    pub phase_undefined: bool,
    /// `m = 0`: the phase is 0 or pi whatever delta is; `cos2_phi` is 1.
    pub m_zero_note: bool,
    pub channels_used: Vec<i32>,
    pub extrema: Option<ExtremaSummary>,
    pub candidates_per_channel: Vec<CandidateSet>,
    pub ambiguity: AmbiguityReport,
    pub timings: Option<StageTimings>,
}

/// Closed-form recovery from the spin-1/2 extremes:
/// `cos^2 delta = x_min / (1 - x_max + x_min)`, `|cos xi| = sqrt(1 - x_max + x_min)`.
pub fn recover(j: HalfInt, m: HalfInt, x_min: f64, x_max: f64) -> Result<ExtractionResult> {
    check_projection(j, m)?;
    if !(x_min.is_finite() && x_max.is_finite()) {
        return Err(Error::Domain("spin-1/2 extremes must be finite".into()));
    }
    if x_min > x_max {
        return Err(Error::Ordering { x_min, x_max });
    }
    if x_min < -1e-12 || x_max > 1.0 + 1e-12 {
        return Err(Error::Domain(format!("spin-1/2 extremes ({x_min}, {x_max}) outside [0, 1]")));
    }
    let (x_min, x_max) = (x_min.clamp(0.0, 1.0), x_max.clamp(0.0, 1.0));
    let cos2_xi = (1.0 - x_max + x_min).clamp(0.0, 1.0);
    let abs_cos_xi = cos2_xi.sqrt();
    let cos2_delta = (cos2_xi > 0.0).then(|| (x_min / cos2_xi).clamp(0.0, 1.0));
    let visibility = visibility_polynomial(j, m, abs_cos_xi)?;
    let m_zero_note = m.twice() == 0;
    let cos2_phi =
        cos2_delta.map(|c2| if m_zero_note { 1.0 } else { chebyshev_t(m.twice().unsigned_abs(), c2.sqrt()).powi(2) });
    Ok(ExtractionResult {
        j,
        m,
        method: RecoveryMethod::Direct,
        x_min,
        x_max,
        cos2_delta,
        abs_cos_xi,
        cos2_phi,
        visibility,
        phase_undefined: cos2_delta.is_none() || visibility < ZERO_VISIBILITY,
        m_zero_note,
        channels_used: Vec::new(),
        extrema: None,
        candidates_per_channel: Vec::new(),
        ambiguity: AmbiguityReport::default(),
        timings: None,
    })
}

/// Recovery for the stretched input `m = j`, whose `m' = j` channel is
/// `x^(2j)`: the spin-1/2 extremes are the `2j`-th roots of the measured ones.
pub fn recover_spin_coherent(j: HalfInt, i_min: f64, i_max: f64) -> Result<ExtractionResult> {
    if j.twice() < 1 {
        return Err(Error::Domain("spin-coherent recovery needs j >= 1/2".into()));
    }
    if i_min > i_max {
        return Err(Error::Ordering { x_min: i_min, x_max: i_max });
    }
    if i_min < 0.0 || i_max > 1.0 {
        return Err(Error::Domain(format!("intensities ({i_min}, {i_max}) outside [0, 1]")));
    }
    let root = 1.0 / f64::from(j.twice());
    let mut out = recover(j, j, i_min.powf(root), i_max.powf(root))?;
    out.method = RecoveryMethod::SpinCoherentClosedForm;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub matching: MatchOptions,
    /// Overrides the separation tolerance (ideal default 1e-3 rad, noisy 0.05 rad).
    pub separation_tol: Option<f64>,
    /// On an ambiguous match, retry with every channel present in the profile.
    pub retry_with_extra_channels: bool,
    /// Use the closed form when the only channel is the stretched one.
    pub spin_coherent_shortcut: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            matching: MatchOptions::default(),
            separation_tol: None,
            retry_with_extra_channels: true,
            spin_coherent_shortcut: true,
        }
    }
}

/// Finds extrema, inverts, matches and recovers. `channels` selects the
/// analyzer channels used first; any further channels in the profile are
/// brought in only to resolve an ambiguous match.
pub fn full_pipeline(
    profile: &IntensityProfile,
    j: HalfInt,
    m: HalfInt,
    channels: &[HalfInt],
    opts: &PipelineOptions,
) -> std::result::Result<ExtractionResult, PipelineError> {
    let setup = |e| PipelineError::new(Stage::Setup, e);
    check_projection(j, m).map_err(setup)?;
    if channels.is_empty() {
        return Err(setup(Error::EmptyChannels));
    }
    for &c in channels {
        check_projection(j, c).map_err(setup)?;
    }
    let first = profile.select(channels).map_err(setup)?;
    match run_once(&first, j, m, opts) {
        Err(PipelineError { stage, source: Error::Ambiguous { at, survivors } }) if opts.retry_with_extra_channels => {
            let extra: Vec<HalfInt> = profile.channel_keys().into_iter().filter(|c| !channels.contains(c)).collect();
            let ambiguous =
                PipelineError::new(stage, Error::Ambiguous { at: at.clone(), survivors: survivors.clone() });
            if extra.is_empty() {
                return Err(ambiguous);
            }
            for &c in &extra {
                check_projection(j, c).map_err(setup)?;
            }
            let mut result = run_once(profile, j, m, opts)?;
            result.ambiguity = AmbiguityReport {
                flagged: true,
                description: Some(format!(
                    "ambiguous match at {at} with channels {:?} (survivors {survivors:?}); resolved by adding channels {:?}",
                    channels.iter().map(|c| c.twice()).collect::<Vec<_>>(),
                    extra.iter().map(|c| c.twice()).collect::<Vec<_>>(),
                )),
            };
            Ok(result)
        }
        other => other,
    }
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

fn run_once(
    profile: &IntensityProfile,
    j: HalfInt,
    m: HalfInt,
    opts: &PipelineOptions,
) -> std::result::Result<ExtractionResult, PipelineError> {
    let keys = profile.channel_keys();
    let n_points = profile.len().max(1) as f64;
    let harmonics = j.twice() as usize;
    let params = (2 * harmonics + 1) as f64;
    // a band-limited least-squares fit spreads the variance of the whole
    // channel over every point
    let fit_factor = (params / n_points).min(1.0);
    let channel_noise: BTreeMap<HalfInt, f64> = keys
        .iter()
        .map(|k| {
            let sigma = match profile.total_counts_per_point {
                Some(n) => {
                    let samples = &profile.channels[k];
                    let mean_var = samples.iter().map(|i| i.clamp(0.0, 1.0) * (1.0 - i.clamp(0.0, 1.0))).sum::<f64>()
                        / samples.len().max(1) as f64;
                    (fit_factor * mean_var.max(1.0 / n as f64) / n as f64).sqrt()
                }
                None => 0.0,
            };
            (*k, sigma)
        })
        .collect();
    let noisy = profile.total_counts_per_point.is_some();

    let coherent =
        opts.spin_coherent_shortcut && keys.len() == 1 && keys[0] == m && m.twice().abs() == j.twice() && j.twice() > 0;
    // the stretched channel is x^(2j); on ideal data its root is a single
    // harmonic in 2 phi and keeps full precision near zero intensity
    let rooted = coherent && !noisy;

    let t0 = Instant::now();
    let flat_tol = match profile.total_counts_per_point {
        Some(n) => 10.0 * (fit_factor * 0.25 / n as f64).sqrt(),
        None => 1e-9,
    };
    let extrema_opts = ExtremaOptions {
        separation_tol: opts.separation_tol.unwrap_or(if noisy { 0.05 } else { SEPARATION_TOL }),
        flat_tol,
        harmonics: Some(if rooted { 1 } else { harmonics.max(1) }),
    };
    let pair = if rooted {
        let power = 1.0 / f64::from(j.twice());
        let mut work = profile.clone();
        for v in work.channels.values_mut() {
            v.iter_mut().for_each(|i| *i = i.clamp(0.0, 1.0).powf(power));
        }
        find_extrema(&work, &extrema_opts)
    } else {
        find_extrema(profile, &extrema_opts)
    }
    .map_err(|e| PipelineError::new(Stage::Extrema, e))?;
    let extrema_us = micros(t0);

    let polys: BTreeMap<HalfInt, ChannelPolynomial> = keys
        .iter()
        .map(|&k| channel_polynomial(j, m, k).map(|cp| (k, cp)))
        .collect::<Result<_>>()
        .map_err(|e| PipelineError::new(Stage::Setup, e))?;

    let t1 = Instant::now();
    let mut at_a = Vec::with_capacity(keys.len());
    let mut at_b = Vec::with_capacity(keys.len());
    for &k in &keys {
        for (values, bucket) in [(&pair.values_a, &mut at_a), (&pair.values_b, &mut at_b)] {
            let target = values[&k];
            let noise = channel_noise[&k];
            let roots = if coherent {
                Vec::new()
            } else {
                let inv = InvertOptions { allowance: (5.0 * noise).max(ROOT_RESIDUAL), ..Default::default() };
                invert_channel_with(&polys[&k], target, &inv).map_err(|e| PipelineError::new(Stage::Inversion, e))?
            };
            bucket.push(ChannelCandidates { channel: k, target, roots, noise });
        }
    }
    let inversion_us = micros(t1);

    let t2 = Instant::now();
    let (x_at_a, x_at_b, method) = if coherent {
        let to_x = |i: f64| if rooted { i.clamp(0.0, 1.0) } else { i.clamp(0.0, 1.0).powf(1.0 / f64::from(j.twice())) };
        (to_x(at_a[0].target), to_x(at_b[0].target), RecoveryMethod::SpinCoherentClosedForm)
    } else {
        let matched =
            match_channels(&at_a, &at_b, &polys, &opts.matching).map_err(|e| PipelineError::new(Stage::Matching, e))?;
        (matched.x_at_a, matched.x_at_b, RecoveryMethod::PolynomialMatching)
    };
    let matching_us = micros(t2);

    let t3 = Instant::now();
    let mut result =
        recover(j, m, x_at_a.min(x_at_b), x_at_a.max(x_at_b)).map_err(|e| PipelineError::new(Stage::Recovery, e))?;
    let recovery_us = micros(t3);

    result.method = method;
    result.channels_used = keys.iter().map(|k| k.twice()).collect();
    result.extrema = Some(ExtremaSummary {
        phi_a: pair.phi_a,
        phi_b: pair.phi_b,
        phi_zeta: if x_at_a <= x_at_b { pair.phi_a } else { pair.phi_b },
        flat: pair.flat,
        spread: pair.spread,
    });
    result.candidates_per_channel = at_a
        .into_iter()
        .map(|c| CandidateSet { at: "phi_a".into(), phi: pair.phi_a, candidates: c })
        .chain(at_b.into_iter().map(|c| CandidateSet { at: "phi_b".into(), phi: pair.phi_b, candidates: c }))
        .collect();
    result.timings = Some(StageTimings { extrema_us, inversion_us, matching_us, recovery_us });
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{pancharatnam_phase, visibility, SuTwoParams};
    use crate::oracle::grid_roots;
    use crate::polarimetry::{all_channels, scan, ScanGrid};
    use proptest::prelude::*;

    const PI_5: f64 = PI / 5.0;

    fn h(t: i32) -> HalfInt {
        HalfInt::from_twice(t)
    }

    fn worked() -> SuTwoParams {
        SuTwoParams::new(PI_5, PI_5, PI_5)
    }

    #[test]
    fn worked_example_extremes() {
        let j = h(3);
        let profile = scan(j, h(1), &worked(), None, &ScanGrid::default(), &[h(1), h(3)]).unwrap();
        let r = full_pipeline(&profile, j, h(1), &[h(1), h(3)], &PipelineOptions::default()).unwrap();
        let x_min = PI_5.cos().powi(4);
        assert!((r.x_min - x_min).abs() < 1e-9, "{}", r.x_min);
        assert!((r.x_max - 0.7739).abs() < 1e-4);
        assert!((r.cos2_delta.unwrap() - PI_5.cos().powi(2)).abs() < 1e-9);
        assert!((r.abs_cos_xi - PI_5.cos()).abs() < 1e-9);
        assert!((r.visibility - visibility(j, h(1), PI_5).unwrap()).abs() < 1e-9);
        assert_eq!(r.method, RecoveryMethod::PolynomialMatching);
        let zeta = r.extrema.unwrap().phi_zeta;
        assert!(circular_distance(zeta, PI_5, PI) < 1e-9, "{zeta}");
    }

    #[test]
    fn single_channel_at_worked_example_is_ambiguous() {
        let cp = channel_polynomial(h(3), h(1), h(1)).unwrap();
        let roots = invert_channel(&cp, cp.eval(0.42838137289060535)).unwrap();
        assert_eq!(roots.len(), 3, "{roots:?}");
    }

    #[test]
    fn spurious_crossing_needs_wide_tolerance() {
        let x_max = 0.773_9;
        let polys: BTreeMap<_, _> =
            [h(1), h(3)].iter().map(|&k| (k, channel_polynomial(h(3), h(1), k).unwrap())).collect();
        let true_x = {
            // the exact x_max of the worked example
            let j = h(3);
            let profile = scan(j, h(1), &worked(), None, &ScanGrid::default(), &[h(1), h(3)]).unwrap();
            full_pipeline(&profile, j, h(1), &[h(1), h(3)], &PipelineOptions::default()).unwrap().x_max
        };
        assert!((true_x - x_max).abs() < 1e-4);
        let cands: Vec<ChannelCandidates> = polys
            .iter()
            .map(|(&k, cp)| {
                let target = cp.eval(true_x);
                ChannelCandidates { channel: k, target, roots: invert_channel(cp, target).unwrap(), noise: 0.0 }
            })
            .collect();
        let x = match_point(&cands, &polys, &MatchOptions::default(), "test").unwrap();
        assert!((x - true_x).abs() < 1e-12);
        let wide = MatchOptions { tolerance: 5e-2, ..Default::default() };
        match match_point(&cands, &polys, &wide, "test") {
            Err(Error::Ambiguous { survivors, .. }) => {
                assert!(survivors.iter().any(|s| (s - 0.54).abs() < 0.01), "{survivors:?}");
            }
            other => panic!("expected ambiguity, got {other:?}"),
        }
        // a third channel removes the spurious survivor
        let mut polys3 = polys.clone();
        polys3.insert(h(-1), channel_polynomial(h(3), h(1), h(-1)).unwrap());
        let mut cands3 = cands.clone();
        let cp = &polys3[&h(-1)];
        let target = cp.eval(true_x);
        cands3.push(ChannelCandidates {
            channel: h(-1),
            target,
            roots: invert_channel(cp, target).unwrap(),
            noise: 0.0,
        });
        let x = match_point(&cands3, &polys3, &wide, "test").unwrap();
        assert!((x - true_x).abs() < 1e-9);
    }

    #[test]
    fn recover_special_cases() {
        let cyclic = recover(h(2), h(2), 0.3, 0.3).unwrap();
        assert!((cyclic.abs_cos_xi - 1.0).abs() < 1e-15);
        assert!((cyclic.cos2_delta.unwrap() - 0.3).abs() < 1e-15);
        assert!((cyclic.visibility - 1.0).abs() < 1e-15);

        let flip = recover(h(1), h(1), 0.0, 1.0).unwrap();
        assert_eq!(flip.cos2_delta, None);
        assert_eq!(flip.cos2_phi, None);
        assert!(flip.phase_undefined);

        let m0 = recover(h(4), h(0), 0.2, 0.6).unwrap();
        assert!(m0.m_zero_note);
        assert_eq!(m0.cos2_phi, Some(1.0));

        assert!(matches!(recover(h(3), h(1), 0.6, 0.2), Err(Error::Ordering { .. })));
        assert!(recover(h(3), h(5), 0.1, 0.2).is_err());
    }

    #[test]
    fn spin_coherent_closed_form() {
        let j = h(4);
        let p = SuTwoParams::new(0.5, 0.7, 1.1);
        let profile = scan(j, j, &p, None, &ScanGrid::default(), &[j]).unwrap();
        let r = full_pipeline(&profile, j, j, &[j], &PipelineOptions::default()).unwrap();
        assert_eq!(r.method, RecoveryMethod::SpinCoherentClosedForm);
        assert!((r.cos2_delta.unwrap() - 0.5f64.cos().powi(2)).abs() < 1e-9);
        assert!((r.abs_cos_xi - 0.7f64.cos()).abs() < 1e-9);
        let direct = recover_spin_coherent(j, 0.1f64.powi(4), 0.6f64.powi(4)).unwrap();
        assert!((direct.x_min - 0.1).abs() < 1e-12 && (direct.x_max - 0.6).abs() < 1e-12);
    }

    #[test]
    fn flat_profile_is_cyclic() {
        let j = h(3);
        let p = SuTwoParams::new(0.4, 0.0, 0.3);
        let profile = scan(j, h(1), &p, None, &ScanGrid::default(), &all_channels(j)).unwrap();
        let r = full_pipeline(&profile, j, h(1), &all_channels(j), &PipelineOptions::default()).unwrap();
        assert!(r.extrema.as_ref().unwrap().flat);
        assert!((r.abs_cos_xi - 1.0).abs() < 1e-9);
        assert!((r.cos2_delta.unwrap() - 0.4f64.cos().powi(2)).abs() < 1e-9);
    }

    #[test]
    fn raw_sample_extrema() {
        let j = h(2);
        let p = SuTwoParams::new(0.3, 0.8, 0.6);
        let profile = scan(j, h(2), &p, None, &ScanGrid::default(), &all_channels(j)).unwrap();
        let pair = find_extrema(&profile, &ExtremaOptions { separation_tol: 2e-3, ..Default::default() }).unwrap();
        assert!(circular_distance(pair.phi_a, 0.6, FRAC_PI_2) < 1e-3, "{pair:?}");
    }

    #[test]
    fn short_scan_has_no_extrema() {
        let j = h(2);
        let mut profile = scan(j, h(2), &SuTwoParams::new(0.3, 0.8, 0.6), None, &ScanGrid::default(), &[h(2)]).unwrap();
        profile.phi.truncate(150);
        for v in profile.channels.values_mut() {
            v.truncate(150);
        }
        assert!(matches!(find_extrema(&profile, &ExtremaOptions::default()), Err(Error::NoExtrema(_))));
    }

    #[test]
    fn out_of_range_target_has_no_solution() {
        let cp = channel_polynomial(h(2), h(0), h(2)).unwrap();
        // this channel never exceeds 1/2
        assert!(matches!(invert_channel(&cp, 0.6), Err(Error::NoSolution { channel: 2, .. })));
        assert!(invert_channel(&cp, -0.1).is_err());
    }

    fn case() -> impl Strategy<Value = (i32, i32, i32, f64, f64)> {
        (1i32..=12).prop_flat_map(|two_j| {
            let m = (0..=two_j).prop_map(move |k| two_j - 2 * k);
            (Just(two_j), m.clone(), m, 0.0f64..1.0, 0.0f64..1.0)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn inversion_agrees_with_oracle((two_j, two_m, two_mp, x, jitter) in case()) {
            let cp = channel_polynomial(h(two_j), h(two_m), h(two_mp)).unwrap();
            // alternate between a reachable level and an arbitrary one
            let target = if jitter < 0.5 { cp.eval(x) } else { jitter - 0.5 };
            // below the residual threshold every point of a flat tail counts as a root
            prop_assume!(target == 0.0 || target > 1e-8);
            let reference = grid_roots(&cp, target, 20_000);
            match invert_channel(&cp, target) {
                Ok(roots) => {
                    prop_assert_eq!(roots.len(), reference.len(), "{:?} vs {:?}", roots, reference);
                    for (a, b) in roots.iter().zip(&reference) {
                        prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
                    }
                }
                Err(_) => prop_assert!(reference.is_empty(), "{:?}", reference),
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn round_trip(two_j in 1i32..=6, k in 0i32..=6, delta in -PI..PI, xi in 0.0f64..PI, zeta in 0.0..PI) {
            let j = h(two_j);
            let m = h(two_j - 2 * (k % (two_j + 1)));
            prop_assume!(m.twice() != 0);
            prop_assume!(xi.sin().powi(2) >= 0.02);
            prop_assume!(visibility(j, m, xi).unwrap() >= 0.05);
            let p = SuTwoParams::new(delta, xi, zeta);
            let profile = scan(j, m, &p, None, &ScanGrid::default(), &all_channels(j)).unwrap();
            let r = full_pipeline(&profile, j, m, &all_channels(j), &PipelineOptions::default()).unwrap();
            prop_assert!((r.cos2_delta.unwrap() - delta.cos().powi(2)).abs() < 1e-6);
            prop_assert!((r.abs_cos_xi - xi.cos().abs()).abs() < 1e-6);
            prop_assert!((r.visibility - visibility(j, m, xi).unwrap()).abs() < 1e-6);
            let phase = pancharatnam_phase(j, m, &p).unwrap();
            prop_assert!((r.cos2_phi.unwrap() - phase.cos().powi(2)).abs() < 1e-5);
        }
    }
}
