//! Experiment configuration, reference presets and seed streams.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::basis::{GridSpec, NeighborhoodNorm, DEFAULT_CENTER_CAP};
use crate::deriv::StencilOrder;
use crate::dynamics::SystemKind;
use crate::observe::EmbeddingLayout;
use crate::saddle::SaddleConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown system '{0}' (expected ks, mg, sm, cr or n-ks)")]
    UnknownSystem(String),
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
}

/// Reference experiment: a simulator plus, for `n-ks`, observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemTag {
    Ks,
    Mg,
    Sm,
    Cr,
    NoisyKs,
}

impl SystemTag {
    pub const ALL: [SystemTag; 5] = [SystemTag::Ks, SystemTag::Mg, SystemTag::Sm, SystemTag::Cr, SystemTag::NoisyKs];

    pub fn tag(self) -> &'static str {
        match self {
            SystemTag::Ks => "ks",
            SystemTag::Mg => "mg",
            SystemTag::Sm => "sm",
            SystemTag::Cr => "cr",
            SystemTag::NoisyKs => "n-ks",
        }
    }

    pub fn kind(self) -> SystemKind {
        match self {
            SystemTag::Ks | SystemTag::NoisyKs => SystemKind::Ks,
            SystemTag::Mg => SystemKind::Mg,
            SystemTag::Sm => SystemKind::Sm,
            SystemTag::Cr => SystemKind::Cr,
        }
    }
}

impl fmt::Display for SystemTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for SystemTag {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SystemTag::ALL.into_iter().find(|t| t.tag() == s).ok_or_else(|| ConfigError::UnknownSystem(s.to_string()))
    }
}

impl Serialize for SystemTag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

impl<'de> Deserialize<'de> for SystemTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A numeric threshold or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Auto,
    Value(f64),
}

impl FromStr for Threshold {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Threshold::Auto),
            "inf" | "infinity" => Ok(Threshold::Value(f64::INFINITY)),
            _ => s
                .parse::<f64>()
                .map(Threshold::Value)
                .map_err(|_| ConfigError::Parse(format!("threshold must be a number or 'auto', got '{s}'"))),
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Threshold::Auto => s.serialize_str("auto"),
            Threshold::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Threshold::Value(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: SystemTag,
    /// Training samples `N_T`.
    pub n_train: usize,
    /// Observation step.
    pub dt: f64,
    pub dt_int: f64,
    pub transient: f64,
    /// Observation noise as a fraction of the signal's standard deviation.
    pub noise_std_ratio: f64,
    /// Samples simulated after the training span for evaluation.
    pub n_heldout: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedSection {
    pub dim: usize,
    pub tau: f64,
    pub layout: EmbeddingLayout,
    /// Index offset `I` between delay-paired components.
    pub pair_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivSection {
    pub order: StencilOrder,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub delta: f64,
    pub m: u32,
    pub p: f64,
    pub lambda: f64,
    pub n_samples: usize,
    pub norm: NeighborhoodNorm,
    pub anchor: f64,
    pub center_cap: usize,
}

impl FitSection {
    pub fn grid(&self) -> GridSpec {
        GridSpec { delta: self.delta, m: self.m, p: self.p, norm: self.norm, anchor: self.anchor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    /// Length of the free-running model trajectory, in time units.
    pub model_length: f64,
    pub forecast_inits: usize,
    pub forecast_horizon: f64,
    pub density_bins: usize,
    pub laminar_threshold: f64,
    pub laminar_bin_width: f64,
    pub laminar_tail_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaddleSection {
    pub enabled: bool,
    pub threshold: Threshold,
    pub segment_length: f64,
    pub keep_length: f64,
    pub trials_max: usize,
    pub total_length: f64,
    pub refine: bool,
}

impl SaddleSection {
    pub fn to_config(&self, threshold: f64, seed: u64) -> SaddleConfig {
        SaddleConfig {
            segment_length: self.segment_length,
            keep_length: self.keep_length,
            trials_max: self.trials_max,
            threshold,
            total_length: self.total_length,
            seed,
            refine: self.refine,
            ..SaddleConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub system: SystemSection,
    pub embed: EmbedSection,
    pub deriv: DerivSection,
    pub fit: FitSection,
    pub evaluate: EvaluateSection,
    pub saddle: SaddleSection,
}

/// Per-system values that differ between experiments.
struct Row {
    dim: usize,
    tau: f64,
    delta: f64,
    /// Grid size at desk scale, chosen so that `J` stays near or below 10^4.
    desk_delta: f64,
    stride: usize,
    lambda: f64,
    pair_offset: usize,
    dt: f64,
    horizon: f64,
    model_length: f64,
}

fn table_row(system: SystemTag) -> Row {
    match system {
        SystemTag::Ks => Row { dim: 5, tau: 0.12, delta: 0.5, desk_delta: 1.0, stride: 1, lambda: 1e-7, pair_offset: 1, dt: 0.01, horizon: 20.0, model_length: 1000.0 },
        SystemTag::Mg => Row { dim: 7, tau: 0.5, delta: 0.25, desk_delta: 1.5, stride: 1, lambda: 1e-7, pair_offset: 1, dt: 0.01, horizon: 50.0, model_length: 1000.0 },
        SystemTag::Sm => Row { dim: 6, tau: 18.0, delta: 0.25, desk_delta: 2.0, stride: 1, lambda: 1e-12, pair_offset: 1, dt: 1.0, horizon: 500.0, model_length: 10_000.0 },
        SystemTag::Cr => Row { dim: 6, tau: 0.4, delta: 0.25, desk_delta: 0.75, stride: 1, lambda: 1e-7, pair_offset: 2, dt: 0.1, horizon: 50.0, model_length: 10_000.0 },
        SystemTag::NoisyKs => {
            Row { dim: 5, tau: 0.12, delta: 0.5, desk_delta: 1.0, stride: 9, lambda: 1e-4, pair_offset: 1, dt: 0.01, horizon: 20.0, model_length: 1000.0 }
        }
    }
}

/// The reference parameter set for `system` at full scale.
pub fn table1_defaults(system: SystemTag) -> ExperimentConfig {
    let row = table_row(system);
    let kind = system.kind();
    let layout = if kind.observables() > 1 { EmbeddingLayout::Interleaved } else { EmbeddingLayout::Single };
    ExperimentConfig {
        seed: 0,
        system: SystemSection {
            name: system,
            n_train: 1_000_000,
            dt: row.dt,
            dt_int: kind.default_dt_int().min(row.dt),
            transient: 1000.0,
            noise_std_ratio: if system == SystemTag::NoisyKs { 0.10 } else { 0.0 },
            n_heldout: 100_000,
        },
        embed: EmbedSection { dim: row.dim, tau: row.tau, layout, pair_offset: row.pair_offset },
        deriv: DerivSection { order: StencilOrder::Sixth, stride: row.stride },
        fit: FitSection {
            delta: row.delta,
            m: 3,
            p: 0.1,
            lambda: row.lambda,
            n_samples: 50_000,
            norm: NeighborhoodNorm::L2,
            anchor: 0.0,
            center_cap: DEFAULT_CENTER_CAP,
        },
        evaluate: EvaluateSection {
            model_length: row.model_length,
            forecast_inits: 10,
            forecast_horizon: row.horizon,
            density_bins: 100,
            laminar_threshold: 1.0,
            laminar_bin_width: 10.0,
            laminar_tail_min: 100.0,
        },
        saddle: SaddleSection {
            enabled: false,
            threshold: Threshold::Auto,
            segment_length: 50.0,
            keep_length: 25.0,
            trials_max: 100,
            total_length: 1000.0,
            refine: false,
        },
    }
}

/// Desk-scale variant: `N_T = 10^5`, `n = 2·10^4`, and a coarser grid.
pub fn desk_preset(system: SystemTag) -> ExperimentConfig {
    let mut cfg = table1_defaults(system);
    cfg.system.n_train = 100_000;
    cfg.fit.n_samples = 20_000;
    cfg.fit.delta = table_row(system).desk_delta;
    cfg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Desk,
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            other => Err(ConfigError::Parse(format!("unknown preset '{other}' (expected full or desk)"))),
        }
    }
}

pub fn preset(system: SystemTag, preset: Preset) -> ExperimentConfig {
    match preset {
        Preset::Full => table1_defaults(system),
        Preset::Desk => desk_preset(system),
    }
}

fn grid_steps(value: f64, step: f64) -> Option<usize> {
    let r = value / step;
    let k = r.round();
    ((r - k).abs() <= 1e-9 * r.abs().max(1.0)).then_some(k as usize)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    /// Applies a `section.key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse(format!("override '{assignment}' is not of the form key=value")))?;
        let mut doc: toml::Table =
            toml::from_str(&self.to_toml()).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        let mut parts: Vec<&str> = key.trim().split('.').collect();
        let leaf = parts.pop().unwrap_or_default();
        let mut node = &mut doc;
        for p in parts {
            node = node
                .get_mut(p)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| ConfigError::Parse(format!("unknown section '{p}' in '{key}'")))?;
        }
        if !node.contains_key(leaf) {
            return Err(ConfigError::Parse(format!("unknown key '{key}'")));
        }
        node.insert(leaf.to_string(), parsed);
        let text = toml::to_string(&doc).map_err(|e| ConfigError::Parse(e.to_string()))?;
        *self = toml::from_str(&text).map_err(|e| ConfigError::Parse(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Observation samples the simulator must produce.
    pub fn samples_needed(&self) -> usize {
        let hw = crate::deriv::DerivativeConfig::new(self.deriv.order, self.deriv.stride, self.system.dt).half_width();
        let lag = self.lag().unwrap_or(0);
        let blocks = self.embed.dim / self.observables().max(1);
        self.system.n_train + self.system.n_heldout + 2 * hw + blocks.saturating_sub(1) * lag
    }

    pub fn observables(&self) -> usize {
        match self.embed.layout {
            EmbeddingLayout::Single => 1,
            EmbeddingLayout::Interleaved => self.system.name.kind().observables(),
        }
    }

    pub fn lag(&self) -> Result<usize, ConfigError> {
        grid_steps(self.embed.tau, self.system.dt).ok_or_else(|| {
            ConfigError::Validation(format!(
                "tau {} is not a multiple of the observation step {}",
                self.embed.tau, self.system.dt
            ))
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Validation(m));
        let s = &self.system;
        if !(s.dt > 0.0 && s.dt_int > 0.0 && s.transient >= 0.0) {
            return bad("dt and dt_int must be positive, transient non-negative".into());
        }
        if grid_steps(s.dt, s.dt_int).is_none_or(|k| k == 0) {
            return bad(format!("observation step {} is not a multiple of dt_int {}", s.dt, s.dt_int));
        }
        if !(s.noise_std_ratio >= 0.0) {
            return bad("noise_std_ratio must be non-negative".into());
        }
        self.lag()?;
        let obs = self.observables();
        if self.embed.dim == 0 || self.embed.dim % obs != 0 {
            return bad(format!("dimension {} is not a multiple of {obs} observables", self.embed.dim));
        }
        if self.embed.pair_offset != obs {
            return bad(format!("pair offset {} must equal the number of embedded observables {obs}", self.embed.pair_offset));
        }
        if self.deriv.stride == 0 {
            return bad("derivative stride must be at least 1".into());
        }
        self.fit.grid().validate().map_err(|e| ConfigError::Validation(e.to_string()))?;
        if !(self.fit.lambda >= 0.0) {
            return bad("lambda must be non-negative".into());
        }
        if self.fit.n_samples == 0 || self.fit.n_samples > s.n_train {
            return bad(format!("n_samples {} must lie in 1..={}", self.fit.n_samples, s.n_train));
        }
        let e = &self.evaluate;
        if !(e.model_length > 0.0 && e.forecast_horizon > 0.0) || e.density_bins == 0 {
            return bad("evaluation lengths and bins must be positive".into());
        }
        let horizon = (e.forecast_horizon / s.dt).round() as usize;
        if e.forecast_inits > 0 && s.n_heldout / e.forecast_inits <= horizon {
            return bad(format!(
                "{} held-out samples cannot hold {} forecast windows of {horizon} steps",
                s.n_heldout, e.forecast_inits
            ));
        }
        let sd = &self.saddle;
        if sd.enabled {
            self.saddle
                .to_config(match sd.threshold {
                    Threshold::Auto => 1.0,
                    Threshold::Value(v) => v,
                }, 0)
                .validate()
                .map_err(|e| ConfigError::Validation(e.to_string()))?;
        }
        Ok(())
    }

    /// `(key, value)` pairs for model provenance.
    pub fn provenance(&self) -> Vec<(String, String)> {
        let doc: toml::Table = toml::from_str(&self.to_toml()).expect("round trip");
        let mut out = Vec::new();
        flatten("", &toml::Value::Table(doc), &mut out);
        out
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<(String, String)>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Seed of the named random stream derived from the root seed.
pub fn stream_seed(root: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
