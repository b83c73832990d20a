//! Run configuration: `key = value` files with `#` comments, presets, and
//! validation.
//!
//! Recognised keys (all optional; defaults come from the selected preset, or
//! `example1` when none is given):
//!
//! | key | meaning |
//! |-----|---------|
//! | `preset` | preset name, see [`crate::presets`] |
//! | `m` | selection function source |
//! | `x_min`, `x_max`, `y_min`, `y_max` | genotype box |
//! | `nx`, `ny` | node counts |
//! | `r`, `kappa`, `epsilon` | model constants |
//! | `mode` | `haploid` or `diploid` |
//! | `ic` | bumps `x0,y0[:w];x1,y1[:w]...` |
//! | `target_mass` | initial mass, or `auto` for the midpoint of (ρ₀⁻, ρ₀⁺) |
//! | `t_max` | horizon of the density run |
//! | `sample_interval` | spacing of diagnostics rows |
//! | `snapshot_times` | comma-separated field snapshot times |
//! | `cfl` | fraction of the stability bound used as time step |
//! | `canonical` | `auto` (one bump only), `on`, `off` |
//! | `canonical_dt`, `canonical_t_max` | canonical solver step and horizon (`auto` = `t_max`) |
//! | `c0x`, `c0y` | initial curvatures of u⁰ |
//! | `mode_threshold` | relative threshold for mode counting |
//! | `out` | output directory |
//! | `seed` | sweep RNG seed |
//! | `sweep_count`, `sweep_box` | sweep size and IC box `x_lo,x_hi,y_lo,y_hi` |
//! | `jobs` | parallel sweep pairs |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::grid::GridSpec;
use crate::pde::{Bump, Ploidy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("key '{key}': {message}")]
    Value { key: String, message: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CanonicalMode {
    Auto,
    On,
    Off,
}

impl CanonicalMode {
    fn as_str(self) -> &'static str {
        match self {
            CanonicalMode::Auto => "auto",
            CanonicalMode::On => "on",
            CanonicalMode::Off => "off",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub count: usize,
    /// `[x_lo, x_hi, y_lo, y_hi]`
    pub domain: [f64; 4],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub m: String,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
    pub r: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub mode: Ploidy,
    pub bumps: Vec<Bump>,
    pub target_mass: Option<f64>,
    pub t_max: f64,
    pub sample_interval: f64,
    /// Empty means initial and final time.
    pub snapshot_times: Vec<f64>,
    pub cfl: f64,
    pub canonical: CanonicalMode,
    pub canonical_dt: f64,
    pub canonical_t_max: Option<f64>,
    pub c0x: f64,
    pub c0y: f64,
    pub mode_threshold: f64,
    pub out: PathBuf,
    pub seed: u64,
    pub sweep_count: usize,
    pub sweep_box: [f64; 4],
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: None,
            m: "x^2+y^2".into(),
            x_min: -2.0,
            x_max: 2.0,
            y_min: -2.0,
            y_max: 2.0,
            nx: 101,
            ny: 101,
            r: 40.0,
            kappa: 1.0,
            epsilon: 0.05,
            mode: Ploidy::Haploid,
            bumps: vec![Bump::new(1.0, -0.5)],
            target_mass: None,
            t_max: 3.0,
            sample_interval: 0.05,
            snapshot_times: Vec::new(),
            cfl: crate::pde::DEFAULT_CFL,
            canonical: CanonicalMode::Auto,
            canonical_dt: 1e-3,
            canonical_t_max: None,
            c0x: -2.0,
            c0y: -2.0,
            mode_threshold: 0.1,
            out: PathBuf::from("out"),
            seed: 1,
            sweep_count: 20,
            sweep_box: [-2.0, 2.0, -2.0, 2.0],
            jobs: 1,
        }
    }
}

pub const KEYS: &[&str] = &[
    "preset", "m", "x_min", "x_max", "y_min", "y_max", "nx", "ny", "r", "kappa", "epsilon", "mode", "ic",
    "target_mass", "t_max", "sample_interval", "snapshot_times", "cfl", "canonical", "canonical_dt",
    "canonical_t_max", "c0x", "c0y", "mode_threshold", "out", "seed", "sweep_count", "sweep_box", "jobs",
];

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    v.trim()
        .parse::<f64>()
        .map_err(|e| ConfigError::Value { key: key.into(), message: format!("'{v}': {e}") })
}

fn parse_usize(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.trim()
        .parse::<usize>()
        .map_err(|e| ConfigError::Value { key: key.into(), message: format!("'{v}': {e}") })
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_f64(key, s)).collect()
}

/// `x0,y0[:w];x1,y1[:w]`
pub fn parse_bumps(v: &str) -> Result<Vec<Bump>, ConfigError> {
    let err = |m: String| ConfigError::Value { key: "ic".into(), message: m };
    let mut out = Vec::new();
    for part in v.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (coords, weight) = match part.split_once(':') {
            Some((c, w)) => (c, parse_f64("ic", w)?),
            None => (part, 1.0),
        };
        let xy = parse_list("ic", coords)?;
        if xy.len() != 2 {
            return Err(err(format!("bump '{part}' needs exactly two coordinates")));
        }
        out.push(Bump { x0: xy[0], y0: xy[1], weight });
    }
    if out.is_empty() {
        return Err(err("no bumps given".into()));
    }
    Ok(out)
}

fn format_bumps(bumps: &[Bump]) -> String {
    bumps
        .iter()
        .map(|b| format!("{},{}:{}", b.x0, b.y0, b.weight))
        .collect::<Vec<_>>()
        .join(";")
}

fn join(vals: &[f64]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// later entries override earlier ones.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
            line: k + 1,
            message: format!("expected 'key = value', got '{line}'"),
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.into()));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_preset(name: &str) -> Result<Self, ConfigError> {
        crate::presets::preset(name).ok_or_else(|| ConfigError::UnknownPreset(name.into()))
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "preset" => self.preset = if v.is_empty() || v == "none" { None } else { Some(v.into()) },
            "m" => self.m = v.into(),
            "x_min" => self.x_min = parse_f64(key, v)?,
            "x_max" => self.x_max = parse_f64(key, v)?,
            "y_min" => self.y_min = parse_f64(key, v)?,
            "y_max" => self.y_max = parse_f64(key, v)?,
            "nx" => self.nx = parse_usize(key, v)?,
            "ny" => self.ny = parse_usize(key, v)?,
            "r" => self.r = parse_f64(key, v)?,
            "kappa" => self.kappa = parse_f64(key, v)?,
            "epsilon" => self.epsilon = parse_f64(key, v)?,
            "mode" => {
                self.mode = v.parse().map_err(|e| ConfigError::Value { key: key.into(), message: e })?
            }
            "ic" => self.bumps = parse_bumps(v)?,
            "target_mass" => self.target_mass = if v == "auto" { None } else { Some(parse_f64(key, v)?) },
            "t_max" => self.t_max = parse_f64(key, v)?,
            "sample_interval" => self.sample_interval = parse_f64(key, v)?,
            "snapshot_times" => self.snapshot_times = parse_list(key, v)?,
            "cfl" => self.cfl = parse_f64(key, v)?,
            "canonical" => {
                self.canonical = match v {
                    "auto" => CanonicalMode::Auto,
                    "on" | "true" => CanonicalMode::On,
                    "off" | "false" => CanonicalMode::Off,
                    other => {
                        return Err(ConfigError::Value { key: key.into(), message: format!("'{other}' is not auto|on|off") })
                    }
                }
            }
            "canonical_dt" => self.canonical_dt = parse_f64(key, v)?,
            "canonical_t_max" => self.canonical_t_max = if v == "auto" { None } else { Some(parse_f64(key, v)?) },
            "c0x" => self.c0x = parse_f64(key, v)?,
            "c0y" => self.c0y = parse_f64(key, v)?,
            "mode_threshold" => self.mode_threshold = parse_f64(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "seed" => {
                self.seed = v.parse().map_err(|e| ConfigError::Value { key: key.into(), message: format!("{e}") })?
            }
            "sweep_count" => self.sweep_count = parse_usize(key, v)?,
            "sweep_box" => {
                let b = parse_list(key, v)?;
                self.sweep_box = b.try_into().map_err(|_| ConfigError::Value {
                    key: key.into(),
                    message: "expected x_lo,x_hi,y_lo,y_hi".into(),
                })?;
            }
            "jobs" => self.jobs = parse_usize(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Builds a configuration from preset defaults, then file entries, then
    /// overrides (typically CLI flags). A `preset` in the overrides wins over
    /// one in the file.
    pub fn resolve(file: &[(String, String)], overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let preset = overrides
            .iter()
            .chain(file.iter())
            .find(|(k, _)| k == "preset")
            .map(|(_, v)| v.clone())
            .filter(|v| !v.is_empty() && v != "none");
        let mut cfg = match &preset {
            Some(name) => Self::from_preset(name)?,
            None => RunConfig::default(),
        };
        for (k, v) in file.iter().chain(overrides) {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        cfg.preset = preset;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<GridSpec, ConfigError> {
        GridSpec::new(self.x_min, self.x_max, self.y_min, self.y_max, self.nx, self.ny)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn sweep(&self) -> SweepSpec {
        SweepSpec { count: self.sweep_count, domain: self.sweep_box, seed: self.seed }
    }

    pub fn canonical_enabled(&self) -> bool {
        match self.canonical {
            CanonicalMode::On => true,
            CanonicalMode::Off => false,
            CanonicalMode::Auto => self.bumps.len() == 1,
        }
    }

    pub fn canonical_horizon(&self) -> f64 {
        self.canonical_t_max.unwrap_or(self.t_max)
    }

    /// Snapshot times with the default (initial and final) materialised.
    pub fn resolved_snapshot_times(&self) -> Vec<f64> {
        if self.snapshot_times.is_empty() {
            vec![0.0, self.t_max]
        } else {
            self.snapshot_times.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.grid()?;
        for (name, v) in [
            ("r", self.r),
            ("kappa", self.kappa),
            ("epsilon", self.epsilon),
            ("t_max", self.t_max),
            ("sample_interval", self.sample_interval),
            ("cfl", self.cfl),
            ("canonical_dt", self.canonical_dt),
            ("mode_threshold", self.mode_threshold),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.mode_threshold >= 1.0 {
            return bad(format!("mode_threshold must lie in (0,1), got {}", self.mode_threshold));
        }
        if let Some(t) = self.canonical_t_max {
            if !(t.is_finite() && t > 0.0) {
                return bad(format!("canonical_t_max must be positive, got {t}"));
            }
        }
        if let Some(mass) = self.target_mass {
            if !(mass.is_finite() && mass > 0.0) {
                return bad(format!("target_mass must be positive, got {mass}"));
            }
        }
        if self.bumps.is_empty() {
            return bad("at least one initial bump is required".into());
        }
        for b in &self.bumps {
            if !(b.x0.is_finite() && b.y0.is_finite() && b.weight.is_finite() && b.weight > 0.0) {
                return bad(format!("invalid bump {b:?}"));
            }
        }
        for t in &self.snapshot_times {
            if !(t.is_finite() && *t >= 0.0 && *t <= self.t_max) {
                return bad(format!("snapshot time {t} outside [0, t_max]"));
            }
        }
        if self.mode == Ploidy::Diploid && !self.grid()?.is_square() {
            return bad("diploid mode needs I = J (a square grid)".into());
        }
        if self.jobs == 0 || self.sweep_count == 0 {
            return bad("jobs and sweep_count must be at least 1".into());
        }
        let b = self.sweep_box;
        if !(b.iter().all(|v| v.is_finite()) && b[0] < b[1] && b[2] < b[3]) {
            return bad(format!("sweep_box must be ordered, got {b:?}"));
        }
        if !(self.c0x < 0.0 && self.c0y < 0.0) {
            return bad("initial curvatures must be negative".into());
        }
        Ok(())
    }

    /// Every key with its materialised value, in a fixed order.
    pub fn to_entries(&self) -> BTreeMap<&'static str, String> {
        let mut e = BTreeMap::new();
        e.insert("preset", self.preset.clone().unwrap_or_else(|| "none".into()));
        e.insert("m", self.m.clone());
        e.insert("x_min", self.x_min.to_string());
        e.insert("x_max", self.x_max.to_string());
        e.insert("y_min", self.y_min.to_string());
        e.insert("y_max", self.y_max.to_string());
        e.insert("nx", self.nx.to_string());
        e.insert("ny", self.ny.to_string());
        e.insert("r", self.r.to_string());
        e.insert("kappa", self.kappa.to_string());
        e.insert("epsilon", self.epsilon.to_string());
        e.insert("mode", self.mode.as_str().into());
        e.insert("ic", format_bumps(&self.bumps));
        e.insert("target_mass", self.target_mass.map_or("auto".into(), |v| v.to_string()));
        e.insert("t_max", self.t_max.to_string());
        e.insert("sample_interval", self.sample_interval.to_string());
        e.insert("snapshot_times", join(&self.resolved_snapshot_times()));
        e.insert("cfl", self.cfl.to_string());
        e.insert("canonical", self.canonical.as_str().into());
        e.insert("canonical_dt", self.canonical_dt.to_string());
        e.insert("canonical_t_max", self.canonical_horizon().to_string());
        e.insert("c0x", self.c0x.to_string());
        e.insert("c0y", self.c0y.to_string());
        e.insert("mode_threshold", self.mode_threshold.to_string());
        e.insert("out", self.out.display().to_string());
        e.insert("seed", self.seed.to_string());
        e.insert("sweep_count", self.sweep_count.to_string());
        e.insert("sweep_box", join(&self.sweep_box));
        e.insert("jobs", self.jobs.to_string());
        e
    }

    /// Text of `resolved.cfg`; parsing it back yields the same configuration.
    pub fn to_resolved_text(&self) -> String {
        let mut s = String::from("# resolved configuration, schema 1\n");
        for (k, v) in self.to_entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_with_comments() {
        let e = parse_entries("# header\nm = (x+y)^2  # squared sum\n\nepsilon=0.1\n").unwrap();
        assert_eq!(e, vec![("m".into(), "(x+y)^2".into()), ("epsilon".into(), "0.1".into())]);
        assert!(matches!(parse_entries("nope"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_entries("colour = red"), Err(ConfigError::UnknownKey(_))));
    }

    #[test]
    fn bumps_syntax() {
        let b = parse_bumps("-0.3,1.3;0.7,-0.5:2").unwrap();
        assert_eq!(b, vec![Bump::new(-0.3, 1.3), Bump { x0: 0.7, y0: -0.5, weight: 2.0 }]);
        assert!(parse_bumps("1").is_err());
        assert!(parse_bumps("").is_err());
    }

    #[test]
    fn overrides_beat_file_and_preset() {
        let file = parse_entries("preset = example2\nepsilon = 0.1\n").unwrap();
        let cfg = RunConfig::resolve(&file, &[("epsilon".into(), "0.02".into())]).unwrap();
        assert_eq!(cfg.m, "(x+y)^2");
        assert_eq!(cfg.epsilon, 0.02);
        let cfg = RunConfig::resolve(&file, &[("preset".into(), "example3".into())]).unwrap();
        assert_eq!(cfg.m, "(1-x*y)^2");
        assert_eq!(cfg.epsilon, 0.1);
        assert!(RunConfig::resolve(&[], &[("preset".into(), "nope".into())]).is_err());
    }

    #[test]
    fn validation() {
        let bad = [("nx", "2"), ("epsilon", "0"), ("t_max", "-1"), ("x_max", "-3"), ("jobs", "0"), ("mode_threshold", "1.5")];
        for (k, v) in bad {
            assert!(RunConfig::resolve(&[], &[(k.into(), v.into())]).is_err(), "{k}={v}");
        }
        let diploid_rect = [("mode".to_string(), "diploid".to_string()), ("ny".to_string(), "51".to_string())];
        assert!(RunConfig::resolve(&[], &diploid_rect).is_err());
    }

    #[test]
    fn resolved_text_round_trips() {
        let cfg = RunConfig::resolve(
            &[],
            &[("preset".into(), "fig1".into()), ("epsilon".into(), "0.0375".into()), ("target_mass".into(), "33.3".into())],
        )
        .unwrap();
        let text = cfg.to_resolved_text();
        let back = RunConfig::resolve(&parse_entries(&text).unwrap(), &[]).unwrap();
        assert_eq!(back.to_resolved_text(), text);
        assert_eq!(back.bumps, cfg.bumps);
        assert_eq!(back.epsilon, cfg.epsilon);
    }
}
