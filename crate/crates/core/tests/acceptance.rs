//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use spinpol_core::error::Error;
use spinpol_core::evolution::SuTwoParams;
use spinpol_core::extraction::{
    full_pipeline, invert_channel, match_point, ChannelCandidates, MatchOptions, PipelineOptions,
};
use spinpol_core::paper_example;
use spinpol_core::polarimetry::{all_channels, channel_polynomial, scan, ChannelPolynomial, ScanGrid};
use spinpol_core::verify::{self, SuiteReport, VerifyConfig};
use spinpol_core::HalfInt;

type Check = Box<dyn Fn() -> Outcome>;

struct Outcome {
    passed: bool,
    detail: String,
}

fn suite(report: SuiteReport, limit_ms: Option<f64>) -> Outcome {
    let mut passed = report.passed;
    let mut detail = format!(
        "{}: {} cases, max error {:.3e} (tol {:.0e})",
        report.name, report.cases, report.max_error, report.tolerance
    );
    if let Some(d) = &report.detail {
        detail.push_str(&format!(", {d}"));
    }
    if let Some(f) = &report.failure {
        detail.push_str(&format!(", failing {f}"));
    }
    if let Some(limit) = limit_ms {
        if report.elapsed_ms > limit {
            passed = false;
            detail.push_str(&format!(", over the {limit:.0} ms budget"));
        }
    }
    Outcome { passed, detail }
}

fn cfg(trials: usize, max_two_j: i32) -> VerifyConfig {
    VerifyConfig { trials, max_two_j, seed: 2024, corrupt: false }
}

fn worked_example() -> Outcome {
    let start = Instant::now();
    let report = match paper_example::run(None) {
        Ok(r) => r,
        Err(e) => return Outcome { passed: false, detail: e.to_string() },
    };
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let values: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{} {}", r.quantity, r.computed.map_or("undefined".into(), |c| format!("{c:.4}"))))
        .collect();
    Outcome { passed: report.passed && ms < 1000.0, detail: format!("{}; {ms:.0} ms", values.join(", ")) }
}

fn candidates(polys: &BTreeMap<HalfInt, ChannelPolynomial>, x: f64) -> Vec<ChannelCandidates> {
    polys
        .iter()
        .map(|(&channel, cp)| {
            let target = cp.eval(x);
            let roots = invert_channel(cp, target).unwrap_or_default();
            ChannelCandidates { channel, target, roots, noise: 0.0 }
        })
        .collect()
}

fn ambiguity() -> Outcome {
    let j = HalfInt::from_twice(3);
    let m = HalfInt::from_twice(1);
    let two = [HalfInt::from_twice(1), HalfInt::from_twice(3)];
    let three = [HalfInt::from_twice(-1), HalfInt::from_twice(1), HalfInt::from_twice(3)];
    let p = SuTwoParams::new(PI / 5.0, PI / 5.0, PI / 5.0);
    let profile = match scan(j, m, &p, None, &ScanGrid::default(), &all_channels(j)) {
        Ok(p) => p,
        Err(e) => return Outcome { passed: false, detail: e.to_string() },
    };
    let wide_match = MatchOptions { tolerance: 10.0 * MatchOptions::default().tolerance, ..Default::default() };
    let wide = PipelineOptions { matching: wide_match, retry_with_extra_channels: false, ..Default::default() };
    let x_max = match full_pipeline(&profile, j, m, &two, &PipelineOptions::default()) {
        Ok(r) => r.x_max,
        Err(e) => return Outcome { passed: false, detail: format!("default tolerance failed: {e}") },
    };

    let pipeline_flags =
        matches!(full_pipeline(&profile, j, m, &two, &wide), Err(e) if matches!(e.source, Error::Ambiguous { .. }));

    let mut polys: BTreeMap<HalfInt, ChannelPolynomial> =
        two.iter().map(|&k| (k, channel_polynomial(j, m, k).expect("valid channel"))).collect();
    let survivors = match match_point(&candidates(&polys, x_max), &polys, &wide_match, "maximum") {
        Err(Error::Ambiguous { survivors, .. }) => survivors,
        Err(e) => return Outcome { passed: false, detail: format!("expected ambiguity, got {e}") },
        Ok(x) => return Outcome { passed: false, detail: format!("two channels resolved to {x:.4}") },
    };
    let spurious = survivors.iter().any(|s| (0.5..0.56).contains(s));

    let minus = HalfInt::from_twice(-1);
    polys.insert(minus, channel_polynomial(j, m, minus).expect("valid channel"));
    let resolved = match match_point(&candidates(&polys, x_max), &polys, &wide_match, "maximum") {
        Ok(x) => (x - x_max).abs(),
        Err(e) => return Outcome { passed: false, detail: format!("third channel did not resolve: {e}") },
    };
    let truth = (PI / 5.0).cos().powi(2);
    let full = match full_pipeline(&profile, j, m, &three, &wide) {
        Ok(r) => (r.cos2_delta.unwrap_or(f64::NAN) - truth).abs(),
        Err(e) => return Outcome { passed: false, detail: format!("pipeline with third channel failed: {e}") },
    };
    Outcome {
        passed: pipeline_flags && spurious && resolved < 1e-9 && full < 1e-9,
        detail: format!(
            "pipeline flagged {pipeline_flags}; survivors at maximum {:?}; with third channel x_max error {resolved:.1e}, cos^2 delta error {full:.1e}",
            survivors.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>()
        ),
    }
}

fn main() -> ExitCode {
    let criteria: Vec<(&str, Check)> = vec![
        ("worked example", Box::new(worked_example)),
        ("oracle equivalence", Box::new(|| suite(verify::oracle_equivalence(&cfg(1000, 12)), Some(30_000.0)))),
        ("normalization", Box::new(|| suite(verify::normalization(&cfg(1000, 12)), None))),
        ("extremum theorem", Box::new(|| suite(verify::extremum_theorem(&cfg(200, 12)), None))),
        ("spin-coherent law and recovery", Box::new(|| suite(verify::spin_coherent(&cfg(200, 8)), None))),
        ("symmetry", Box::new(|| suite(verify::symmetry(&cfg(200, 12)), None))),
        ("noiseless round trip", Box::new(|| suite(verify::noiseless_round_trip(&cfg(200, 6)), None))),
        ("noisy round trip", Box::new(|| suite(verify::noisy_round_trip(&cfg(100, 6), 1_000_000, 0.02, 0.95), None))),
        ("geodesic phase", Box::new(|| suite(verify::geodesic_phase(&cfg(50, 6)), None))),
        ("special cases", Box::new(|| suite(verify::special_cases(&cfg(200, 12)), None))),
        ("ambiguity handling", Box::new(ambiguity)),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        let status = if outcome.passed { "PASS" } else { "FAIL" };
        println!("AC{:<2} {status} {name} [{secs:.2} s] {}", i + 1, outcome.detail);
        if !outcome.passed {
            failures += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
