//! Run configuration: one TOML table per stage, partial files merged over
//! the defaults, dotted-key overrides and resolution/frame-rate scaling.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::{frame_rate_factor, ClassifierCalibration, EdgeSigmas, EdgeWeights};
use crate::edgemap::CannyParams;
use crate::ellipse::{FitFilters, FitSigmas, FitWeights};
use crate::estimator::EstimatorParams;
use crate::locate::LocateParams;
use crate::segment::SegmentParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing configuration: {0}")]
    Parse(String),
    #[error("override `{key}`: {reason}")]
    Override { key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineParams {
    /// Edge window length in points; also the minimum edge size for selection and segmentation.
    pub window: usize,
    /// Image width the pixel-valued defaults are tuned for.
    pub reference_width: f64,
    pub reference_height: f64,
    pub reference_fps: f64,
    /// Sampling rate of the input sequence.
    pub fps: f64,
    /// Frame time after which optional fits are skipped.
    pub time_cap_ms: f64,
    pub curvature_model: Option<PathBuf>,
    pub classifier_calibration: Option<PathBuf>,
    pub selection_radius: SelectionRadius,
}

/// Distance from the position estimate within which edge selection rays
/// accept every edge they cross, not just the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRadius {
    /// `ΔL/2`. A glint ring around the estimate then hides any pupil whose
    /// radius exceeds the search margin.
    Margin,
    /// `(max(Ŵ, Ĥ) + ΔL)/2`: the predicted pupil radius plus half the margin.
    #[default]
    PupilAndMargin,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            window: 7,
            reference_width: 400.0,
            reference_height: 200.0,
            reference_fps: 250.0,
            fps: 250.0,
            time_cap_ms: 20.0,
            curvature_model: None,
            classifier_calibration: None,
            selection_radius: SelectionRadius::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyParams {
    pub weights: EdgeWeights,
    pub sigmas: EdgeSigmas,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EllipseConfig {
    pub filters: FitFilters,
    pub weights: FitWeights,
    pub sigmas: FitSigmas,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub pipeline: PipelineParams,
    pub estimator: EstimatorParams,
    pub locate: LocateParams,
    pub canny: CannyParams,
    pub segment: SegmentParams,
    pub classify: ClassifyParams,
    pub ellipse: EllipseConfig,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl Config {
    fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("configuration serializes")
    }

    fn from_table(t: toml::Table) -> Result<Self, ConfigError> {
        t.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    /// Parses a possibly partial configuration; absent keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let mut base = Config::default().to_table();
        merge(&mut base, user);
        let cfg = Self::from_table(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Sets one dotted key such as `estimator.alpha_position`. The value is read
    /// as a TOML literal, falling back to a plain string.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let err = |reason: String| ConfigError::Override { key: key.to_string(), reason };
        let parsed: toml::Value = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut table = self.to_table();
        let parts: Vec<&str> = key.split('.').collect();
        let (last, parents) = parts.split_last().ok_or_else(|| err("empty key".into()))?;
        let mut cur = &mut table;
        for p in parents {
            cur = match cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new())) {
                toml::Value::Table(t) => t,
                _ => return Err(err(format!("`{p}` is not a section"))),
            };
        }
        cur.insert(last.to_string(), parsed);
        let cfg = Self::from_table(table).map_err(|e| err(e.to_string()))?;
        cfg.validate().map_err(|e| err(e.to_string()))?;
        *self = cfg;
        Ok(())
    }

    /// Applies `key=value` pairs in order.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<(), ConfigError> {
        for pair in pairs {
            let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::Override {
                key: pair.to_string(),
                reason: "expected key=value".into(),
            })?;
            self.apply_override(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = ConfigError::Invalid;
        self.estimator.validate().map_err(inv)?;
        self.locate.validate().map_err(inv)?;
        self.canny.validate().map_err(inv)?;
        self.segment.validate().map_err(inv)?;
        self.classify.sigmas.validate().map_err(inv)?;
        self.ellipse.filters.validate().map_err(inv)?;
        let p = &self.pipeline;
        if p.window < 2 {
            return Err(inv("pipeline.window must be at least 2".into()));
        }
        if !(p.fps > 0.0 && p.reference_fps > 0.0 && p.reference_width > 0.0 && p.reference_height > 0.0) {
            return Err(inv("pipeline frame rates and reference size must be positive".into()));
        }
        let t = &self.estimator.typical;
        let f = &self.ellipse.filters;
        if !(f.circumference_min..=f.circumference_max).contains(&t.circumference) {
            return Err(inv("estimator.typical.circumference must lie within the circumference filter range".into()));
        }
        Ok(())
    }

    /// Copy adapted to the input: pixel-valued parameters follow the width
    /// ratio to the reference image, change thresholds widen at frame rates
    /// below the reference rate.
    pub fn scaled(&self, width: usize, _height: usize, fps: f64) -> Config {
        let mut c = self.clone();
        let s = width as f64 / self.pipeline.reference_width;
        let t = frame_rate_factor(fps, self.pipeline.reference_fps);
        c.pipeline.fps = fps;
        let e = &mut c.estimator;
        e.lower.position *= s;
        e.upper.position *= s;
        for th in [&mut e.lower, &mut e.upper] {
            th.position *= t;
            th.circumference *= t;
            th.aspect_ratio *= t;
        }
        e.typical.circumference *= s;
        let f = &mut c.ellipse.filters;
        f.circumference_min *= s;
        f.circumference_max *= s;
        f.circumference_slope *= s;
        let k = ((self.locate.glint_kernel as f64 * s).round() as usize).max(3);
        c.locate.glint_kernel = if k % 2 == 0 { k + 1 } else { k };
        c
    }

    /// Score curves with the frame-rate widening applied.
    pub fn effective_edge_sigmas(&self) -> EdgeSigmas {
        self.classify.sigmas.scaled(frame_rate_factor(self.pipeline.fps, self.pipeline.reference_fps))
    }

    /// Replaces the edge score curves and threshold with a calibration file's values.
    pub fn apply_classifier_calibration(&mut self, cal: &ClassifierCalibration) {
        self.classify.sigmas = cal.sigmas.clone();
        self.classify.weights.threshold = cal.threshold;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        assert_eq!(Config::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = Config::from_toml_str("[estimator]\nalpha_position = 0.5\n[estimator.upper]\nposition = 8.0\n").unwrap();
        assert_eq!(c.estimator.alpha_position, 0.5);
        assert_eq!(c.estimator.upper.position, 8.0);
        assert_eq!(c.estimator.upper.circumference, 0.12);
        assert_eq!(c.pipeline.window, 7);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::from_toml_str("[estimator]\nalpha_positon = 0.5\n").is_err());
        assert!(Config::from_toml_str("[nonsense]\nx = 1\n").is_err());
    }

    #[test]
    fn dotted_overrides() {
        let mut c = Config::default();
        c.apply_overrides(["estimator.steepness=as-written", "ellipse.filters.max_fits = 3", "pipeline.window=5"]).unwrap();
        assert_eq!(c.estimator.steepness, crate::estimator::SteepnessRule::AsWritten);
        assert_eq!(c.ellipse.filters.max_fits, 3);
        assert_eq!(c.pipeline.window, 5);
        c.apply_override("pipeline.curvature_model", "/tmp/x.cal").unwrap();
        assert_eq!(c.pipeline.curvature_model.as_deref(), Some(Path::new("/tmp/x.cal")));
        assert!(c.apply_override("estimator.nope", "1").is_err());
        assert!(c.apply_override("estimator.alpha_position", "2.0").is_err());
        assert!(c.apply_overrides(["no-equals"]).is_err());
    }

    #[test]
    fn cross_field_validation() {
        assert!(Config::from_toml_str("[ellipse.filters]\ncircumference_min = 300.0\n").is_err());
    }

    #[test]
    fn reference_input_is_identity() {
        let c = Config::default();
        assert_eq!(c.scaled(400, 200, 250.0), c);
    }

    #[test]
    fn half_width_halves_pixel_parameters() {
        let c = Config::default();
        let s = c.scaled(200, 100, 250.0);
        assert_eq!(s.estimator.lower.position, 1.5);
        assert_eq!(s.estimator.upper.position, 3.0);
        assert_eq!(s.ellipse.filters.circumference_min, 30.0);
        assert_eq!(s.ellipse.filters.circumference_max, 145.0);
        assert_eq!(s.estimator.lower.circumference, 0.03);
        assert!(s.locate.glint_kernel % 2 == 1 && s.locate.glint_kernel >= 3);
    }

    #[test]
    fn half_rate_doubles_thresholds() {
        let s = Config::default().scaled(400, 200, 125.0);
        assert_eq!(s.estimator.upper.position, 12.0);
        assert_eq!(s.estimator.lower.position, 6.0);
        assert_eq!(s.effective_edge_sigmas().curvature, 10.0);
    }
}
