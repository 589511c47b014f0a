//! The worked example: `delta = xi = zeta = pi/5`, `j = 3/2`, `m = 1/2`,
//! analyzer channels `m' = 1/2, 3/2`, compared against the published
//! two-digit values.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, PipelineError, Stage};
use crate::evolution::SuTwoParams;
use crate::extraction::{full_pipeline, ExtractionResult, PipelineOptions};
use crate::polarimetry::{all_channels, scan, simulate_counts, IntensityProfile, ScanGrid};
use crate::spin_algebra::HalfInt;

pub const J: HalfInt = HalfInt::from_twice(3);
pub const M: HalfInt = HalfInt::from_twice(1);
pub const CHANNELS: [HalfInt; 2] = [HalfInt::from_twice(1), HalfInt::from_twice(3)];

pub fn params() -> SuTwoParams {
    SuTwoParams::new(PI / 5.0, PI / 5.0, PI / 5.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub counts: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub quantity: String,
    pub published: f64,
    pub computed: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperExampleReport {
    pub noise: Option<NoiseSpec>,
    pub rows: Vec<ComparisonRow>,
    pub passed: bool,
    pub result: ExtractionResult,
}

/// The scan fed to the pipeline. Noisy runs record every channel so that
/// an ambiguous match can be retried with the extra ones.
pub fn profile(noise: Option<NoiseSpec>) -> Result<IntensityProfile, Error> {
    let grid = ScanGrid::default();
    match noise {
        None => scan(J, M, &params(), None, &grid, &CHANNELS),
        Some(n) => {
            let ideal = scan(J, M, &params(), None, &grid, &all_channels(J))?;
            simulate_counts(&ideal, n.counts, n.seed)
        }
    }
}

pub fn run(noise: Option<NoiseSpec>) -> Result<PaperExampleReport, PipelineError> {
    let profile = profile(noise).map_err(|e| PipelineError::new(Stage::Setup, e))?;
    let result = full_pipeline(&profile, J, M, &CHANNELS, &PipelineOptions::default())?;
    let expected = [
        ("I_min (spin-1/2)", 0.43, Some(result.x_min), 0.01),
        ("I_max (spin-1/2)", 0.77, Some(result.x_max), 0.01),
        ("cos^2 Phi", 0.65, result.cos2_phi, 0.01),
        ("|cos xi|", 0.81, Some(result.abs_cos_xi), 0.01),
        ("visibility", 0.03, Some(result.visibility), 0.005),
    ];
    let rows: Vec<ComparisonRow> = expected
        .into_iter()
        .map(|(quantity, published, computed, tolerance)| ComparisonRow {
            quantity: quantity.to_string(),
            published,
            computed,
            tolerance,
            pass: computed.is_some_and(|c| (c - published).abs() <= tolerance),
        })
        .collect();
    let passed = rows.iter().all(|r| r.pass);
    Ok(PaperExampleReport { noise, rows, passed, result })
}

pub fn render_table(report: &PaperExampleReport) -> String {
    let mut out = String::new();
    match report.noise {
        Some(n) => {
            let _ = writeln!(out, "worked example, {} counts per point, seed {}", n.counts, n.seed);
        }
        None => {
            let _ = writeln!(out, "worked example, ideal intensities");
        }
    }
    let _ = writeln!(out, "{:<18} {:>9} {:>12} {:>9}  status", "quantity", "published", "computed", "tol");
    for r in &report.rows {
        let computed = r.computed.map_or_else(|| "undefined".to_string(), |c| format!("{c:.6}"));
        let status = if r.pass { "ok" } else { "MISMATCH" };
        let _ =
            writeln!(out, "{:<18} {:>9.3} {:>12} {:>9.3}  {status}", r.quantity, r.published, computed, r.tolerance);
    }
    let _ =
        writeln!(out, "cos^2 delta = {}", report.result.cos2_delta.map_or("undefined".into(), |c| format!("{c:.6}")));
    if report.result.ambiguity.flagged {
        if let Some(d) = &report.result.ambiguity.description {
            let _ = writeln!(out, "note: {d}");
        }
    }
    let _ = writeln!(out, "{}", if report.passed { "all quantities agree" } else { "mismatch" });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_run_matches() {
        let report = run(None).unwrap();
        assert!(report.passed, "{}", render_table(&report));
        assert!((report.result.x_min - (PI / 5.0).cos().powi(4)).abs() < 1e-9);
        assert!(render_table(&report).contains("visibility"));
    }

    #[test]
    fn noisy_run_matches() {
        let report = run(Some(NoiseSpec { counts: 1_000_000, seed: 3 })).unwrap();
        assert!(report.passed, "{}", render_table(&report));
        let truth = (PI / 5.0).cos().powi(2);
        assert!((report.result.cos2_delta.unwrap() - truth).abs() < 0.02);
    }
}
