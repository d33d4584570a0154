use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alignment::DEFAULT_BG_THRESHOLD;
use crate::controller::{DEFAULT_TAU1, DEFAULT_TAU2};
use crate::error::{CtaError, Result};
use crate::simulator::{Corruption, Preset, SceneConfig, ScheduleMode, SourceConfig};

pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_BATCH: usize = 4;
pub const DEFAULT_RATIO: usize = 32;
pub const DEFAULT_REFERENCE_SAMPLES: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Direct,
    Full,
    Ours,
    OursSkip,
    EvenlySkip(usize),
}

impl Method {
    pub fn adapts_backbone(self) -> bool {
        matches!(self, Method::Full)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Direct => f.write_str("direct"),
            Method::Full => f.write_str("full"),
            Method::Ours => f.write_str("ours"),
            Method::OursSkip => f.write_str("ours-skip"),
            Method::EvenlySkip(n) => write!(f, "evenly-skip-{n}"),
        }
    }
}

impl FromStr for Method {
    type Err = CtaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Method::Direct),
            "full" => Ok(Method::Full),
            "ours" => Ok(Method::Ours),
            "ours-skip" => Ok(Method::OursSkip),
            _ => s
                .strip_prefix("evenly-skip-")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(Method::EvenlySkip)
                .ok_or_else(|| {
                    CtaError::Config(format!(
                        "unknown method `{s}` (expected direct, full, ours, ours-skip or evenly-skip-N)"
                    ))
                }),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptorConfig {
    /// Bottleneck reduction ratio; the hidden width is `d / ratio`.
    pub ratio: usize,
    /// Flip each down-projection column so it starts active on the source
    /// mean. The sign flip keeps the init distribution unchanged.
    pub orient_down: bool,
}

impl Default for AdaptorConfig {
    fn default() -> Self {
        Self {
            ratio: DEFAULT_RATIO,
            orient_down: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateConfig {
    pub lr: f64,
    pub alpha: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub tau1: f64,
    pub tau2: f64,
    pub bg_threshold: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            tau1: DEFAULT_TAU1,
            tau2: DEFAULT_TAU2,
            bg_threshold: DEFAULT_BG_THRESHOLD,
        }
    }
}

/// A named preset, or an inline segment list that replaces it when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub preset: Preset,
    pub segments: Vec<Corruption>,
    /// Mode for inline segments.
    pub mode: ScheduleMode,
    /// Default segment length; the preset's own default when absent.
    pub segment_steps: Option<usize>,
    pub severity: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            preset: Preset::ShiftDiscreteLike,
            segments: Vec::new(),
            mode: ScheduleMode::Discrete,
            segment_steps: None,
            severity: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Reference statistics file. Written by `prep`, read by `run` when it
    /// exists, computed in memory otherwise.
    pub references: Option<PathBuf>,
    /// Dump the scene stream as a binary trace.
    pub trace: bool,
    /// Save final backbone and adaptor weights.
    pub weights: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            references: None,
            trace: false,
            weights: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Drives the adaptor init and the scene stream.
    pub seed: u64,
    /// Drives the source model, the scenario's random directions and the
    /// reference draw, so runs with different `seed` share one benchmark.
    pub model_seed: u64,
    pub method: Method,
    pub batch_size: usize,
    pub reference_samples: usize,
    pub source: SourceConfig,
    pub scene: SceneConfig,
    pub adaptor: AdaptorConfig,
    pub rates: RateConfig,
    pub thresholds: ThresholdConfig,
    pub scenario: ScenarioConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model_seed: 0,
            method: Method::Ours,
            batch_size: DEFAULT_BATCH,
            reference_samples: DEFAULT_REFERENCE_SAMPLES,
            source: SourceConfig::default(),
            scene: SceneConfig::default(),
            adaptor: AdaptorConfig::default(),
            rates: RateConfig::default(),
            thresholds: ThresholdConfig::default(),
            scenario: ScenarioConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CtaError::Config(msg()))
    }
}

fn is_clean(c: &Corruption) -> bool {
    c.dim == 0.0 && c.drift == 0.0 && c.scale == 1.0 && c.noise == 0.0 && c.tilt == 0.0
}

fn valid_tau(t: f64) -> bool {
    t >= 1.0 || t.is_infinite()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CtaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CtaError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CtaError::Config(m) => CtaError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CtaError::Config(e.to_string()))
    }

    pub fn hidden(&self) -> usize {
        self.source.dim / self.adaptor.ratio
    }

    pub fn validate(&self) -> Result<()> {
        self.source
            .validate()
            .map_err(|e| CtaError::Config(e.to_string()))?;
        self.scene
            .validate()
            .map_err(|e| CtaError::Config(e.to_string()))?;
        let r = &self.rates;
        check(r.lr >= 0.0 && r.lr.is_finite(), || {
            format!("lr {} must be finite and >= 0", r.lr)
        })?;
        check(r.alpha > 0.0 && r.alpha <= 1.0, || {
            format!("alpha {} outside (0, 1]", r.alpha)
        })?;
        let t = &self.thresholds;
        check(valid_tau(t.tau1) && valid_tau(t.tau2), || {
            format!(
                "tau1 {} and tau2 {} must be >= 1 or infinite",
                t.tau1, t.tau2
            )
        })?;
        check(t.bg_threshold > 0.0 && t.bg_threshold < 1.0, || {
            format!("bg_threshold {} outside (0, 1)", t.bg_threshold)
        })?;
        check(self.batch_size >= 1, || "batch_size must be >= 1".into())?;
        check(self.reference_samples >= 4, || {
            "reference_samples must be >= 4".into()
        })?;
        let ratio = self.adaptor.ratio;
        check(ratio >= 1 && self.source.dim.is_multiple_of(ratio), || {
            format!("ratio {ratio} must divide d={}", self.source.dim)
        })?;
        let s = &self.scenario;
        check(s.severity >= 0.0 && s.severity.is_finite(), || {
            format!("severity {} must be finite and >= 0", s.severity)
        })?;
        check(s.segment_steps != Some(0), || {
            "segment_steps must be positive".into()
        })?;
        check(
            s.segments.is_empty() || s.segments.last().is_some_and(is_clean),
            || "the last inline segment must be the untouched source domain".into(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::Direct,
            Method::Full,
            Method::Ours,
            Method::OursSkip,
            Method::EvenlySkip(7),
        ] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("evenly-skip-0".parse::<Method>().is_err());
        assert!("tent".parse::<Method>().is_err());
    }

    #[test]
    fn defaults_and_partial_files() {
        let cfg = ExperimentConfig::from_toml_str("seed = 3\n[rates]\nlr = 0.01\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.rates.lr, 0.01);
        assert_eq!(cfg.rates.alpha, 0.01);
        assert_eq!(cfg.thresholds.tau1, 1.1);
        assert_eq!(cfg.thresholds.tau2, 1.05);
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.adaptor.ratio, 32);
        assert_eq!(cfg.reference_samples, 2000);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml_str("sed = 3\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[rates]\nmomentum = 0.9\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig {
            method: Method::EvenlySkip(4),
            ..ExperimentConfig::default()
        };
        cfg.thresholds.tau1 = f64::INFINITY;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn inline_segments() {
        let text = r#"
            [scenario]
            mode = "continuous"
            [[scenario.segments]]
            label = "fog"
            dim = 0.3
            duration = 50
            [[scenario.segments]]
            label = "clear"
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.scenario.segments.len(), 2);
        assert_eq!(cfg.scenario.segments[0].duration, 50);
        assert_eq!(cfg.scenario.mode, ScheduleMode::Continuous);
        // Forgetting is measured on a final clean segment.
        let noisy_end = format!("{text}            noise = 0.1\n");
        assert!(ExperimentConfig::from_toml_str(&noisy_end).is_err());
        let reversed = text
            .replace("label = \"fog\"", "label = \"tmp\"")
            .replace("label = \"clear\"", "label = \"fog\"\n            dim = 0.3")
            .replace("label = \"tmp\"\n            dim = 0.3", "label = \"clear\"");
        assert!(ExperimentConfig::from_toml_str(&reversed).is_err());
    }

    #[test]
    fn range_checks() {
        for bad in [
            "[rates]\nalpha = 0.0",
            "[rates]\nlr = -1.0",
            "[thresholds]\ntau1 = 0.5",
            "[thresholds]\nbg_threshold = 1.0",
            "batch_size = 0",
            "[adaptor]\nratio = 128",
            "[adaptor]\nratio = 3",
        ] {
            assert!(ExperimentConfig::from_toml_str(bad).is_err(), "{bad}");
        }
        assert!(ExperimentConfig::from_toml_str("[thresholds]\ntau1 = inf\ntau2 = -inf").is_ok());
    }
}
