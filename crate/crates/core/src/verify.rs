//! Randomized property suites comparing the polynomial forward model, the
//! inverse pipeline and the dense-matrix oracle.
//!
//! Every suite draws its cases from a seeded ChaCha stream, so a failing
//! tuple can be replayed from the seed alone.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evolution::{
    geodesic_unitary, pancharatnam_phase, visibility, visibility_polynomial, GeodesicPath, SuTwoParams,
};
use crate::extraction::{full_pipeline, PipelineOptions};
use crate::oracle::{direct_intensity, direct_sandwich};
use crate::polarimetry::{
    all_channels, channel_polynomial, scan, simulate_counts, spin_half_intensity, ChannelPolynomial, ScanGrid,
};
use crate::spin_algebra::{chebyshev_t, projections, wigner_small_d, HalfInt};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub trials: usize,
    pub max_two_j: i32,
    pub seed: u64,
    /// Negative control: perturb every channel polynomial on the
    /// polynomial path so the oracle suites must fail.
    pub corrupt: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { trials: 200, max_two_j: 12, seed: 1, corrupt: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Offending tuple of the first failure.
    pub failure: Option<String>,
    pub detail: Option<String>,
    pub elapsed_ms: f64,
}

struct Tracker {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    max_error: f64,
    failure: Option<String>,
    start: Instant,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self { name, tolerance, cases: 0, max_error: 0.0, failure: None, start: Instant::now() }
    }

    fn record(&mut self, error: f64, tuple: impl FnOnce() -> String) {
        let error = if error.is_nan() { f64::INFINITY } else { error };
        self.max_error = self.max_error.max(error);
        if error > self.tolerance && self.failure.is_none() {
            self.failure = Some(format!("{} (error {error:.3e})", tuple()));
        }
    }

    fn finish(self, detail: Option<String>) -> SuiteReport {
        SuiteReport {
            name: self.name.to_string(),
            cases: self.cases,
            max_error: self.max_error,
            tolerance: self.tolerance,
            passed: self.failure.is_none(),
            failure: self.failure,
            detail,
            elapsed_ms: self.start.elapsed().as_secs_f64() * 1e3,
        }
    }
}

fn rng_for(seed: u64, suite: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(suite);
    rng
}

fn random_spin(rng: &mut ChaCha8Rng, lo: i32, max_two_j: i32) -> HalfInt {
    HalfInt::from_twice(rng.random_range(lo..=max_two_j.max(lo)))
}

fn random_projection(rng: &mut ChaCha8Rng, j: HalfInt) -> HalfInt {
    let k = rng.random_range(0..=j.twice());
    HalfInt::from_twice(j.twice() - 2 * k)
}

fn random_params(rng: &mut ChaCha8Rng) -> SuTwoParams {
    SuTwoParams::new(rng.random_range(-PI..PI), rng.random_range(0.0..PI), rng.random_range(-PI..PI))
}

fn polynomial(j: HalfInt, m: HalfInt, mp: HalfInt, corrupt: bool) -> ChannelPolynomial {
    let cp = channel_polynomial(j, m, mp).expect("valid projections");
    if corrupt {
        cp.corrupted()
    } else {
        cp
    }
}

fn poly_intensity(j: HalfInt, m: HalfInt, mp: HalfInt, p: &SuTwoParams, phi: f64, corrupt: bool) -> f64 {
    polynomial(j, m, mp, corrupt).eval(spin_half_intensity(p, phi))
}

fn tuple(j: HalfInt, m: HalfInt, mp: HalfInt, p: &SuTwoParams, phi: f64) -> String {
    format!("j={j} m={m} m'={mp} delta={:.6} xi={:.6} zeta={:.6} phi={phi:.6}", p.delta, p.xi, p.zeta)
}

/// Polynomial intensities against the dense sandwich operator.
pub fn oracle_equivalence(cfg: &VerifyConfig) -> SuiteReport {
    let mut t = Tracker::new("oracle-equivalence", 1e-10);
    let mut rng = rng_for(cfg.seed, 1);
    for _ in 0..cfg.trials {
        let j = random_spin(&mut rng, 0, cfg.max_two_j);
        let (m, mp) = (random_projection(&mut rng, j), random_projection(&mut rng, j));
        let p = random_params(&mut rng);
        let phi = rng.random_range(0.0..PI);
        let err = (poly_intensity(j, m, mp, &p, phi, cfg.corrupt) - direct_intensity(j, m, mp, &p, phi)).abs();
        t.cases += 1;
        t.record(err, || tuple(j, m, mp, &p, phi));
    }
    t.finish(None)
}

/// Channel intensities sum to one.
pub fn normalization(cfg: &VerifyConfig) -> SuiteReport {
    let mut t = Tracker::new("normalization", 1e-12);
    let mut rng = rng_for(cfg.seed, 1);
    for _ in 0..cfg.trials {
        // same stream as the oracle suite: identical tuples
        let j = random_spin(&mut rng, 0, cfg.max_two_j);
        let (m, mp) = (random_projection(&mut rng, j), random_projection(&mut rng, j));
        let p = random_params(&mut rng);
        let phi = rng.random_range(0.0..PI);
        let total: f64 = projections(j).map(|k| poly_intensity(j, m, k, &p, phi, cfg.corrupt)).sum();
        t.cases += 1;
        t.record((total - 1.0).abs(), || tuple(j, m, mp, &p, phi));
    }
    t.finish(None)
}

/// Every channel is stationary at `phi = zeta` and `phi = zeta + pi/2`.
/// Central differences of the dense operator, relative to the beam
/// intensity (the channels sum to one). The intensity is even about both
/// points, so the step only trades against round-off.
pub fn extremum_theorem(cfg: &VerifyConfig) -> SuiteReport {
    let mut t = Tracker::new("extremum-locations", 1e-8);
    let mut rng = rng_for(cfg.seed, 2);
    let h = 1e-4;
    for _ in 0..cfg.trials {
        let j = random_spin(&mut rng, 1, cfg.max_two_j);
        let m = random_projection(&mut rng, j);
        let p = random_params(&mut rng);
        for phi in [p.zeta, p.zeta + FRAC_PI_2] {
            let ahead = direct_sandwich(j, &p, phi + h);
            let behind = direct_sandwich(j, &p, phi - h);
            for mp in projections(j) {
                let slope = (ahead.element(mp, m).norm_sqr() - behind.element(mp, m).norm_sqr()) / (2.0 * h);
                t.record(slope.abs(), || tuple(j, m, mp, &p, phi));
            }
        }
        t.cases += 1;
    }
    t.finish(None)
}

/// Stretched channel equals the spin-1/2 intensity to the power `2j`, and
/// the closed-form recovery returns the generating parameters.
pub fn spin_coherent(cfg: &VerifyConfig) -> SuiteReport {
    let mut law = Tracker::new("spin-coherent", 1e-12);
    let mut rng = rng_for(cfg.seed, 3);
    let mut worst_recovery = 0.0f64;
    let mut recovery_failure = None;
    let top = cfg.max_two_j.clamp(1, 8);
    for case in 0..cfg.trials.max(top as usize) {
        let two_j = 1 + (case as i32 % top);
        let j = HalfInt::from_twice(two_j);
        let p = random_params(&mut rng);
        let phi = rng.random_range(0.0..PI);
        let x = spin_half_intensity(&p, phi);
        let expected = x.powi(two_j);
        let err = (poly_intensity(j, j, j, &p, phi, cfg.corrupt) - expected)
            .abs()
            .max((direct_intensity(j, j, j, &p, phi) - expected).abs());
        law.record(err, || tuple(j, j, j, &p, phi));
        law.cases += 1;
    }
    // recovery needs a nondegenerate swing
    for two_j in 1..=top {
        let j = HalfInt::from_twice(two_j);
        let p = loop {
            let p = random_params(&mut rng);
            if p.xi.sin().powi(2) >= 0.02 && p.xi.cos().abs() >= 0.05 {
                break p;
            }
        };
        let profile = scan(j, j, &p, None, &ScanGrid::default(), &[j]).expect("valid scan");
        let err = match full_pipeline(&profile, j, j, &[j], &PipelineOptions::default()) {
            Ok(r) => (r.cos2_delta.unwrap_or(f64::NAN) - p.delta.cos().powi(2))
                .abs()
                .max((r.abs_cos_xi - p.xi.cos().abs()).abs()),
            Err(_) => f64::INFINITY,
        };
        let err = if err.is_nan() { f64::INFINITY } else { err };
        worst_recovery = worst_recovery.max(err);
        if err > 1e-9 && recovery_failure.is_none() {
            recovery_failure = Some(format!("closed-form recovery j={j} {p:?} (error {err:.3e})"));
        }
    }
    let mut report = law.finish(Some(format!("closed-form recovery max error {worst_recovery:.3e} (tolerance 1e-9)")));
    if report.failure.is_none() {
        report.failure = recovery_failure;
    }
    report.passed = report.failure.is_none();
    report
}

/// `m' -> -m'` is `x -> 1 - x`, and flipping both projections leaves the
/// intensity unchanged.
pub fn symmetry(cfg: &VerifyConfig) -> SuiteReport {
    let mut t = Tracker::new("symmetry", 1e-12);
    let mut rng = rng_for(cfg.seed, 4);
    for _ in 0..cfg.trials {
        let j = random_spin(&mut rng, 0, cfg.max_two_j);
        let (m, mp) = (random_projection(&mut rng, j), random_projection(&mut rng, j));
        let p = random_params(&mut rng);
        let phi = rng.random_range(0.0..PI);
        let x = rng.random_range(0.0..1.0);
        let mirrored =
            (polynomial(j, m, -mp, cfg.corrupt).eval(x) - polynomial(j, m, mp, cfg.corrupt).eval(1.0 - x)).abs();
        let flipped =
            (poly_intensity(j, -m, -mp, &p, phi, cfg.corrupt) - poly_intensity(j, m, mp, &p, phi, cfg.corrupt)).abs();
        t.cases += 1;
        t.record(mirrored.max(flipped), || format!("{} x={x:.6}", tuple(j, m, mp, &p, phi)));
    }
    t.finish(None)
}

/// Draws `(j, m, p)` with `m != 0`, visibility at least 0.05 and a spin-1/2
/// swing of at least 0.02.
fn recoverable_case(rng: &mut ChaCha8Rng, max_two_j: i32) -> (HalfInt, HalfInt, SuTwoParams) {
    loop {
        let j = random_spin(rng, 1, max_two_j);
        let m = random_projection(rng, j);
        let p = SuTwoParams::new(rng.random_range(-PI..PI), rng.random_range(0.0..PI), rng.random_range(0.0..PI));
        if m.twice() == 0 || p.xi.sin().powi(2) < 0.02 {
            continue;
        }
        if visibility(j, m, p.xi).unwrap_or(0.0) >= 0.05 {
            return (j, m, p);
        }
    }
}

/// Ideal scans through the full pipeline recover `cos^2 delta` and `|cos xi|`.
pub fn noiseless_round_trip(cfg: &VerifyConfig) -> SuiteReport {
    let mut t = Tracker::new("noiseless-round-trip", 1e-6);
    let mut rng = rng_for(cfg.seed, 5);
    for _ in 0..cfg.trials {
        let (j, m, p) = recoverable_case(&mut rng, cfg.max_two_j.min(6));
        let channels = all_channels(j);
        let profile = scan(j, m, &p, None, &ScanGrid::default(), &channels).expect("valid scan");
        let err = match full_pipeline(&profile, j, m, &channels, &PipelineOptions::default()) {
            Ok(r) => (r.cos2_delta.unwrap_or(f64::NAN) - p.delta.cos().powi(2))
                .abs()
                .max((r.abs_cos_xi - p.xi.cos().abs()).abs()),
            Err(_) => f64::INFINITY,
        };
        t.cases += 1;
        t.record(err, || format!("j={j} m={m} {p:?}"));
    }
    t.finish(None)
}

/// Multinomial counts at `counts` particles per point: the suite passes
/// when at least `required` of the cases land within `tolerance` on
/// `cos^2 delta`.
pub fn noisy_round_trip(cfg: &VerifyConfig, counts: u64, tolerance: f64, required: f64) -> SuiteReport {
    let mut t = Tracker::new("noisy-round-trip", tolerance);
    let mut rng = rng_for(cfg.seed, 6);
    let mut within = 0usize;
    let mut first_miss = None;
    for case in 0..cfg.trials {
        let (j, m, p) = recoverable_case(&mut rng, cfg.max_two_j.min(6));
        let channels = all_channels(j);
        let ideal = scan(j, m, &p, None, &ScanGrid::default(), &channels).expect("valid scan");
        let noise_seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(case as u64);
        let noisy = simulate_counts(&ideal, counts, noise_seed).expect("valid counts");
        let err = match full_pipeline(&noisy, j, m, &channels, &PipelineOptions::default()) {
            Ok(r) => (r.cos2_delta.unwrap_or(f64::NAN) - p.delta.cos().powi(2)).abs(),
            Err(_) => f64::INFINITY,
        };
        let err = if err.is_nan() { f64::INFINITY } else { err };
        t.cases += 1;
        t.max_error = t.max_error.max(err);
        if err <= tolerance {
            within += 1;
        } else if first_miss.is_none() {
            first_miss = Some(format!("j={j} m={m} {p:?} noise seed {noise_seed} (error {err:.3e})"));
        }
    }
    let fraction = within as f64 / t.cases.max(1) as f64;
    if fraction < required {
        t.failure = Some(format!(
            "only {within}/{} within {tolerance}; first miss {}",
            t.cases,
            first_miss.clone().unwrap_or_default()
        ));
    }
    let detail = format!("{within}/{} within {tolerance} (required {:.0}%)", t.cases, required * 100.0);
    t.finish(Some(detail))
}

fn unit(theta: f64, phi: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

/// Closed geodesic triangles from the north pole give the phase `-m Omega`.
pub fn geodesic_phase(cfg: &VerifyConfig) -> SuiteReport {
    let mut t = Tracker::new("geodesic-phase", 1e-8);
    let mut rng = rng_for(cfg.seed, 7);
    let top = cfg.max_two_j.clamp(1, 6);
    let north = [0.0, 0.0, 1.0];
    let check = |t: &mut Tracker, path: &GeodesicPath, label: &str| {
        for two_j in 1..=top {
            let j = HalfInt::from_twice(two_j);
            let u = geodesic_unitary(j, path);
            for m in projections(j) {
                let el = u.element(m, m);
                let expected = -m.value() * path.omega();
                let err = (el.norm() - 1.0)
                    .abs()
                    .max((el.arg().cos() - expected.cos()).abs())
                    .max((el.arg().sin() - expected.sin()).abs());
                t.record(err, || format!("{label} j={j} m={m} omega={:.6}", path.omega()));
            }
        }
    };
    let octant = GeodesicPath::new(vec![north, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).expect("octant");
    check(&mut t, &octant, "octant");
    let octant_phase = geodesic_unitary(HalfInt::HALF, &octant).element(HalfInt::HALF, HalfInt::HALF).arg();
    t.record((octant_phase + FRAC_PI_4).abs() / 1e4, || format!("octant phase {octant_phase}"));
    let mut made = 0;
    while made < cfg.trials {
        let a = unit(rng.random_range(0.1..3.0), rng.random_range(-PI..PI));
        let b = unit(rng.random_range(0.1..3.0), rng.random_range(-PI..PI));
        let Ok(path) = GeodesicPath::new(vec![north, a, b]) else { continue };
        check(&mut t, &path, &format!("triangle {a:?} {b:?}"));
        made += 1;
        t.cases += 1;
    }
    t.finish(Some(format!("octant phase at m=1/2: {octant_phase:.15}")))
}

/// Listed closed forms of the visibility and of `cos^2 Phi`.
pub fn special_cases(cfg: &VerifyConfig) -> SuiteReport {
    let mut t = Tracker::new("special-cases", 1e-12);
    let mut rng = rng_for(cfg.seed, 8);
    let h = HalfInt::from_twice;
    type Form = fn(f64) -> f64;
    let visibilities: [(HalfInt, HalfInt, Form); 5] = [
        (h(1), h(1), |c| c.abs()),
        (h(2), h(0), |c| (2.0 * c * c - 1.0).abs()),
        (h(2), h(2), |c| c * c),
        (h(3), h(1), |c| (3.0 * c.powi(3) - 2.0 * c).abs()),
        (h(3), h(3), |c| c.powi(3).abs()),
    ];
    let phases: [(HalfInt, Form); 3] =
        [(h(1), |c| c * c), (h(2), |c| (-1.0 + 2.0 * c * c).powi(2)), (h(3), |c| (-3.0 * c + 4.0 * c.powi(3)).powi(2))];
    for _ in 0..cfg.trials.max(1) {
        let xi = rng.random_range(0.0..PI);
        let c = xi.cos();
        for (j, m, form) in visibilities {
            let exact = visibility(j, m, xi).expect("valid");
            let poly = visibility_polynomial(j, m, c.abs()).expect("valid");
            let d = wigner_small_d(j, m, m, xi).expect("valid").abs();
            let err = (exact - form(c)).abs().max((poly - form(c)).abs()).max((d - form(c)).abs());
            t.record(err, || format!("visibility j={j} m={m} xi={xi:.6}"));
        }
        let delta = rng.random_range(-PI..PI);
        for (m, form) in phases {
            let cd = delta.cos();
            let cheb = chebyshev_t(m.twice() as u32, cd).powi(2);
            let mut err = (cheb - form(cd)).abs();
            for two_j in m.twice()..=m.twice() + 2 {
                let j = h(two_j);
                let p = SuTwoParams::new(delta, 0.3, rng.random_range(-PI..PI));
                if let Ok(phase) = pancharatnam_phase(j, m, &p) {
                    err = err.max((phase.cos().powi(2) - form(cd)).abs());
                }
            }
            t.record(err, || format!("cos^2 phase m={m} delta={delta:.6}"));
        }
        t.cases += 1;
    }
    t.finish(None)
}

/// Every suite with the configured number of trials. The noisy suite runs
/// at most 100 cases.
pub fn run_all(cfg: &VerifyConfig) -> Vec<SuiteReport> {
    let noisy_cfg = VerifyConfig { trials: cfg.trials.min(100), ..*cfg };
    vec![
        oracle_equivalence(cfg),
        normalization(cfg),
        extremum_theorem(cfg),
        spin_coherent(cfg),
        symmetry(cfg),
        noiseless_round_trip(cfg),
        noisy_round_trip(&noisy_cfg, 1_000_000, 0.02, 0.95),
        geodesic_phase(cfg),
        special_cases(cfg),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyConfig {
        VerifyConfig { trials: 20, max_two_j: 8, seed: 11, corrupt: false }
    }

    #[test]
    fn suites_pass_on_small_run() {
        for report in run_all(&small()) {
            assert!(report.passed, "{report:?}");
            assert!(report.cases > 0);
        }
    }

    #[test]
    fn corruption_is_named() {
        let cfg = VerifyConfig { corrupt: true, ..small() };
        let report = oracle_equivalence(&cfg);
        assert!(!report.passed);
        assert!(report.failure.unwrap().contains("j="));
        assert!(!normalization(&cfg).passed);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = oracle_equivalence(&small());
        let b = oracle_equivalence(&small());
        assert_eq!(a.max_error, b.max_error);
    }
}
