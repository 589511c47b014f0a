//! Run configuration shared by the JSON config file and the command line.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use spinpol_core::evolution::SuTwoParams;
use spinpol_core::polarimetry::{all_channels, GuideField, ScanGrid};
use spinpol_core::profile_io::ProfileFormat;
use spinpol_core::spin_algebra::check_projection;
use spinpol_core::HalfInt;

/// Analyzer channels as doubled projections, or every channel.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawChannels", into = "RawChannels")]
pub enum ChannelSpec {
    #[default]
    All,
    List(Vec<i32>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawChannels {
    Word(String),
    List(Vec<i32>),
}

impl TryFrom<RawChannels> for ChannelSpec {
    type Error = String;
    fn try_from(raw: RawChannels) -> Result<Self, String> {
        match raw {
            RawChannels::Word(w) => w.parse(),
            RawChannels::List(v) => Ok(ChannelSpec::List(v)),
        }
    }
}

impl From<ChannelSpec> for RawChannels {
    fn from(spec: ChannelSpec) -> Self {
        match spec {
            ChannelSpec::All => RawChannels::Word("all".into()),
            ChannelSpec::List(v) => RawChannels::List(v),
        }
    }
}

impl FromStr for ChannelSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(ChannelSpec::All);
        }
        s.split(',')
            .map(|part| {
                part.trim()
                    .parse::<i32>()
                    .map_err(|_| format!("channel '{}' is not a doubled integer projection", part.trim()))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(ChannelSpec::List)
    }
}

impl ChannelSpec {
    pub fn resolve(&self, j: HalfInt) -> Result<Vec<HalfInt>, ConfigError> {
        match self {
            ChannelSpec::All => Ok(all_channels(j)),
            ChannelSpec::List(v) if v.is_empty() => Err(ConfigError::new("channels", "channel list is empty")),
            ChannelSpec::List(v) => v
                .iter()
                .map(|&c| {
                    let mp = HalfInt::from_twice(c);
                    check_projection(j, mp).map(|_| mp).map_err(|e| ConfigError::new("channels", e.to_string()))
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<ProfileFormat>,
}

fn default_points() -> usize {
    ScanGrid::default().points
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Doubled spin.
    pub j: i32,
    /// Doubled input projection.
    pub m: i32,
    pub delta: f64,
    pub xi: f64,
    pub zeta: f64,
    /// Angles above are in degrees.
    #[serde(default)]
    pub degrees: bool,
    #[serde(default)]
    pub channels: ChannelSpec,
    #[serde(default = "default_points")]
    pub phi_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts_per_point: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guide: Option<GuideField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "field '{}': {}", self.field, self.message)
    }
}

/// A configuration converted to library types.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedRun {
    pub j: HalfInt,
    pub m: HalfInt,
    pub params: SuTwoParams,
    pub channels: Vec<HalfInt>,
    pub grid: ScanGrid,
    pub counts: Option<(u64, u64)>,
    pub guide: Option<GuideField>,
}

impl RunConfig {
    pub fn parse_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text)
            .map_err(|e| ConfigError::new("config", format!("{e} (line {}, column {})", e.line(), e.column())))
    }

    pub fn validate(&self) -> Result<ValidatedRun, ConfigError> {
        let j = HalfInt::spin(self.j).map_err(|e| ConfigError::new("j", e.to_string()))?;
        let m = HalfInt::from_twice(self.m);
        check_projection(j, m).map_err(|e| ConfigError::new("m", e.to_string()))?;
        let scale = if self.degrees { std::f64::consts::PI / 180.0 } else { 1.0 };
        for (name, v) in [("delta", self.delta), ("xi", self.xi), ("zeta", self.zeta)] {
            if !v.is_finite() {
                return Err(ConfigError::new(name, format!("angle must be finite, got {v}")));
            }
        }
        let params = SuTwoParams::new(self.delta * scale, self.xi * scale, self.zeta * scale);
        let channels = self.channels.resolve(j)?;
        if self.phi_points < 8 {
            return Err(ConfigError::new("phi_points", format!("need at least 8 points, got {}", self.phi_points)));
        }
        let counts = match self.counts_per_point {
            Some(0) => return Err(ConfigError::new("counts_per_point", "must be at least 1")),
            Some(n) => Some((n, self.seed.unwrap_or(0))),
            None => None,
        };
        let guide = self
            .guide
            .map(|g| GuideField::new(g.b_field, g.moment, g.speed, g.order))
            .transpose()
            .map_err(|e| ConfigError::new("guide", e.to_string()))?;
        Ok(ValidatedRun { j, m, params, channels, grid: ScanGrid::with_points(self.phi_points), counts, guide })
    }
}
