//! CSV and JSON serialization of [`IntensityProfile`].
//!
//! One row per (grid point, channel): `phi,channel_2mp,intensity[,counts,total]`.
//! `phi` is written with 12 significant digits; the channel key is the doubled
//! projection so half-integers stay exact in text.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarimetry::IntensityProfile;
use crate::spin_algebra::HalfInt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileFormat {
    Csv,
    Json,
}

impl ProfileFormat {
    /// Guess from a file extension; defaults to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ProfileFormat::Json,
            _ => ProfileFormat::Csv,
        }
    }
}

impl FromStr for ProfileFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ProfileFormat::Csv),
            "json" => Ok(ProfileFormat::Json),
            other => Err(Error::Domain(format!("unknown profile format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub phi: f64,
    pub channel_2mp: i32,
    pub intensity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<u64>,
}

/// Formats `x` in positional notation with `sig` significant digits.
pub fn format_significant(x: f64, sig: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (sig as i64 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

fn round_significant(x: f64, sig: usize) -> f64 {
    format_significant(x, sig).parse().unwrap_or(x)
}

pub fn to_rows(profile: &IntensityProfile) -> Vec<ProfileRow> {
    let mut rows = Vec::with_capacity(profile.len() * profile.channels.len());
    for (i, &phi) in profile.phi.iter().enumerate() {
        for (key, samples) in &profile.channels {
            let counts = profile.counts.as_ref().and_then(|c| c.get(key)).map(|v| v[i]);
            rows.push(ProfileRow {
                phi,
                channel_2mp: key.twice(),
                intensity: samples[i],
                counts,
                total: counts.and(profile.total_counts_per_point),
            });
        }
    }
    rows
}

/// Rebuilds a profile from rows ordered by grid point. Every grid point must
/// carry the same channel set.
pub fn from_rows(rows: &[ProfileRow]) -> Result<IntensityProfile> {
    if rows.is_empty() {
        return Err(Error::Profile("profile has no rows".into()));
    }
    let mut phi: Vec<f64> = Vec::new();
    let mut per_point: Vec<Vec<&ProfileRow>> = Vec::new();
    for row in rows {
        if phi.last() != Some(&row.phi) {
            phi.push(row.phi);
            per_point.push(Vec::new());
        }
        per_point.last_mut().expect("pushed above").push(row);
    }
    let keys: Vec<i32> = per_point[0].iter().map(|r| r.channel_2mp).collect();
    let with_counts = rows[0].counts.is_some();
    let mut channels: BTreeMap<HalfInt, Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<HalfInt, Vec<u64>> = BTreeMap::new();
    let mut total = None;
    for (i, point) in per_point.iter().enumerate() {
        let these: Vec<i32> = point.iter().map(|r| r.channel_2mp).collect();
        if these != keys {
            return Err(Error::Profile(format!(
                "grid point {i} (phi = {}) has channels {these:?}, expected {keys:?}",
                phi[i]
            )));
        }
        for r in point {
            let key = HalfInt::from_twice(r.channel_2mp);
            channels.entry(key).or_default().push(r.intensity);
            match (with_counts, r.counts, r.total) {
                (true, Some(c), Some(t)) => {
                    if total.is_some_and(|prev| prev != t) {
                        return Err(Error::Profile("total counts differ between rows".into()));
                    }
                    total = Some(t);
                    counts.entry(key).or_default().push(c);
                }
                (false, None, _) => {}
                _ => return Err(Error::Profile(format!("row at phi = {} has inconsistent count columns", r.phi))),
            }
        }
    }
    let profile = IntensityProfile {
        phi,
        channels,
        counts: with_counts.then_some(counts),
        total_counts_per_point: total,
        translations: None,
    };
    profile.validate()?;
    Ok(profile)
}

pub fn write_csv<W: Write>(profile: &IntensityProfile, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let with_counts = profile.counts.is_some();
    if with_counts {
        w.write_record(["phi", "channel_2mp", "intensity", "counts", "total"])?;
    } else {
        w.write_record(["phi", "channel_2mp", "intensity"])?;
    }
    for row in to_rows(profile) {
        let mut rec = vec![format_significant(row.phi, 12), row.channel_2mp.to_string(), format!("{}", row.intensity)];
        if with_counts {
            rec.push(row.counts.map(|c| c.to_string()).unwrap_or_default());
            rec.push(row.total.map(|c| c.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a CSV profile. Output of [`write_csv`] always ends in a newline;
/// input that does not is treated as truncated.
pub fn read_csv<R: Read>(mut reader: R) -> Result<IntensityProfile> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    if !text.ends_with('\n') {
        return Err(Error::Profile("input is truncated (no final newline)".into()));
    }
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let expected = ["phi", "channel_2mp", "intensity"];
    if headers.len() < 3 || headers.iter().take(3).ne(expected) {
        return Err(Error::Profile(format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>())));
    }
    let rows = r.deserialize().collect::<std::result::Result<Vec<ProfileRow>, _>>()?;
    from_rows(&rows)
}

pub fn write_json<W: Write>(profile: &IntensityProfile, writer: W) -> Result<()> {
    let rows: Vec<ProfileRow> =
        to_rows(profile).into_iter().map(|r| ProfileRow { phi: round_significant(r.phi, 12), ..r }).collect();
    serde_json::to_writer_pretty(writer, &rows)?;
    Ok(())
}

pub fn read_json<R: Read>(reader: R) -> Result<IntensityProfile> {
    let rows: Vec<ProfileRow> = serde_json::from_reader(reader)?;
    from_rows(&rows)
}

pub fn save(profile: &IntensityProfile, path: &Path, format: ProfileFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        ProfileFormat::Csv => write_csv(profile, &mut out)?,
        ProfileFormat::Json => write_json(profile, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<IntensityProfile> {
    let input = BufReader::new(File::open(path)?);
    match ProfileFormat::from_path(path) {
        ProfileFormat::Csv => read_csv(input),
        ProfileFormat::Json => read_json(input),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::SuTwoParams;
    use crate::polarimetry::{all_channels, scan, simulate_counts, ScanGrid};

    fn sample() -> IntensityProfile {
        let j = HalfInt::from_twice(3);
        let p = SuTwoParams::new(0.4, 0.9, -0.2);
        scan(j, HalfInt::from_twice(1), &p, None, &ScanGrid::with_points(24), &all_channels(j)).unwrap()
    }

    #[test]
    fn significant_digits() {
        assert_eq!(format_significant(std::f64::consts::PI, 12), "3.14159265359");
        assert_eq!(format_significant(0.0123456789012345, 12), "0.0123456789012");
        assert_eq!(format_significant(0.0, 12), "0");
    }

    #[test]
    fn csv_header_and_reparse() {
        let profile = sample();
        let mut buf = Vec::new();
        write_csv(&profile, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("phi,channel_2mp,intensity\n"));
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.channels, profile.channels);
        for (a, b) in back.phi.iter().zip(&profile.phi) {
            assert!((a - b).abs() <= 1e-11 * b.abs().max(1.0));
        }
        // a second write of the parsed profile is byte-identical
        let mut again = Vec::new();
        write_csv(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn counts_columns_round_trip_in_both_formats() {
        let noisy = simulate_counts(&sample(), 5000, 3).unwrap();
        let mut csv_buf = Vec::new();
        write_csv(&noisy, &mut csv_buf).unwrap();
        assert!(String::from_utf8_lossy(&csv_buf).starts_with("phi,channel_2mp,intensity,counts,total\n"));
        let from_csv = read_csv(csv_buf.as_slice()).unwrap();
        assert_eq!(from_csv.counts, noisy.counts);
        assert_eq!(from_csv.total_counts_per_point, Some(5000));

        let mut json_buf = Vec::new();
        write_json(&noisy, &mut json_buf).unwrap();
        let from_json = read_json(json_buf.as_slice()).unwrap();
        assert_eq!(from_json.counts, noisy.counts);
        assert_eq!(from_json.channels, noisy.channels);
    }

    #[test]
    fn truncated_input_is_rejected() {
        let mut buf = Vec::new();
        write_csv(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.len() - 40];
        assert!(read_csv(cut.as_bytes()).is_err());
        assert!(read_csv("phi,channel_2mp,intensity\n".as_bytes()).is_err());
        assert!(read_csv("a,b,c\n1,2,3\n".as_bytes()).is_err());
    }
}
