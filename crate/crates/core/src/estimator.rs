//! Recursive per-frame estimation of pupil characteristics.
//!
//! Every tracked feature keeps a prediction, a momentum term approximating the
//! recent prediction error and (for appearance features) a slow running
//! average that the prediction relaxes towards while the pupil is not found.
//! Two certainty channels, one for position and one for appearance, gate the
//! momentum term and, downstream, the size of the search area, classifier
//! weights and thresholds.

use serde::{Deserialize, Serialize};

use crate::geom::axis_angle_diff;

/// Change in raw certainty applied on a frame without an accepted fit.
pub const MISS_CERTAINTY_DELTA: f64 = -1.0;

/// How the logistic steepness is derived from `a`, `b` and the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SteepnessRule {
    /// `k = ln((1/a − 1) / (b·δ′))`. Depends on the threshold's unit: for the
    /// relative thresholds of circumference and aspect ratio it is close to
    /// zero and the certainty barely moves.
    AsWritten,
    /// `k = ln(1/a − 1) / (b·δ′)`: the logistic reaches fraction `a` of its
    /// range at `δ = b·δ′`, independent of the threshold's unit.
    #[default]
    HalfThreshold,
}

/// Thresholds on the frame-to-frame change of position, circumference and aspect ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeThresholds {
    /// Pixels.
    pub position: f64,
    /// Relative change.
    pub circumference: f64,
    /// Absolute change.
    pub aspect_ratio: f64,
}

/// Starting values for the appearance features at the beginning of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypicalValues {
    pub circumference: f64,
    pub aspect_ratio: f64,
    pub angle: f64,
    pub intensity: f64,
    pub gradient: f64,
    /// Degrees per edge point. `None` uses the midpoint of the curvature model
    /// limits for the typical circumference and aspect ratio.
    pub curvature: Option<f64>,
}

impl Default for TypicalValues {
    fn default() -> Self {
        Self {
            circumference: 150.0,
            aspect_ratio: 0.9,
            angle: 0.0,
            intensity: 60.0,
            gradient: 20.0,
            curvature: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorParams {
    pub alpha_position: f64,
    pub alpha_appearance: f64,
    pub alpha_mean: f64,
    pub alpha_certainty: f64,
    pub tau: f64,
    pub logistic_a: f64,
    pub logistic_b: f64,
    pub steepness: SteepnessRule,
    /// δ′ thresholds (typical frame-to-frame change).
    pub lower: ChangeThresholds,
    /// δ″ thresholds (change unlikely to be physiological).
    pub upper: ChangeThresholds,
    pub typical: TypicalValues,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self {
            alpha_position: 0.75,
            alpha_appearance: 0.40,
            alpha_mean: 0.005,
            alpha_certainty: 1.0,
            tau: 10.0,
            logistic_a: 0.99,
            logistic_b: 0.50,
            steepness: SteepnessRule::default(),
            lower: ChangeThresholds { position: 3.0, circumference: 0.03, aspect_ratio: 0.03 },
            upper: ChangeThresholds { position: 6.0, circumference: 0.12, aspect_ratio: 0.09 },
            typical: TypicalValues::default(),
        }
    }
}

impl EstimatorParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, a) in [
            ("alpha_position", self.alpha_position),
            ("alpha_appearance", self.alpha_appearance),
            ("alpha_mean", self.alpha_mean),
        ] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(format!("estimator.{name} must lie in (0, 1], got {a}"));
            }
        }
        if !(self.logistic_a > 0.0 && self.logistic_a < 1.0) {
            return Err(format!("estimator.logistic_a must lie in (0, 1), got {}", self.logistic_a));
        }
        if self.logistic_b <= 0.0 || self.tau <= 0.0 || self.alpha_certainty <= 0.0 {
            return Err("estimator.logistic_b, tau and alpha_certainty must be positive".into());
        }
        let pairs = [
            ("position", self.lower.position, self.upper.position),
            ("circumference", self.lower.circumference, self.upper.circumference),
            ("aspect_ratio", self.lower.aspect_ratio, self.upper.aspect_ratio),
        ];
        for (name, lo, hi) in pairs {
            if !(lo > 0.0 && lo < hi) {
                return Err(format!("estimator thresholds for {name} need 0 < lower < upper ({lo}, {hi})"));
            }
        }
        Ok(())
    }
}

/// Logistic steepness for a given threshold.
pub fn steepness(threshold: f64, a: f64, b: f64, rule: SteepnessRule) -> f64 {
    match rule {
        SteepnessRule::AsWritten => ((1.0 / a - 1.0) / (b * threshold)).ln(),
        SteepnessRule::HalfThreshold => (1.0 / a - 1.0).ln() / (b * threshold),
    }
}

/// Certainty change for an observed frame-to-frame change `delta`, in (−1, 1).
/// Positive below `threshold`, zero at it, negative above.
pub fn certainty_delta(delta: f64, threshold: f64, a: f64, b: f64, rule: SteepnessRule) -> f64 {
    let k = steepness(threshold, a, b, rule);
    1.0 - 2.0 / (1.0 + (k * (delta - threshold)).exp())
}

/// Applies a certainty change. Returns the clamped raw certainty and the
/// logistic-bounded certainty derived from it.
pub fn certainty_update(raw: f64, delta_c: f64, alpha_class: f64, alpha_c: f64, tau: f64) -> (f64, f64) {
    let next = (raw + alpha_class * alpha_c * delta_c).clamp(0.0, 1.0);
    (next, derived_certainty(next, tau))
}

pub fn derived_certainty(raw: f64, tau: f64) -> f64 {
    1.0 / (1.0 + (-tau * (raw - 0.5)).exp())
}

/// Prediction, momentum and running average of one scalar feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrack {
    pub prediction: f64,
    pub momentum: f64,
    pub average: f64,
    pub typical: f64,
}

impl FeatureTrack {
    pub fn new(typical: f64) -> Self {
        Self { prediction: typical, momentum: 0.0, average: typical, typical }
    }

    /// Update with a prediction error `error = f − f̂`, gain `alpha` and certainty `c`.
    fn correct(&mut self, error: f64, alpha: f64, certainty: f64, alpha_mean: f64) {
        let previous = self.prediction;
        self.prediction = previous + alpha * error + certainty * self.momentum;
        self.momentum += alpha * (error - self.momentum);
        self.average += alpha_mean * (previous - self.average);
    }

    /// Relax towards the running average without a measurement.
    fn relax(&mut self, alpha: f64, certainty: f64, alpha_mean: f64) {
        self.prediction += alpha * (self.average - self.prediction) + certainty * self.momentum;
        self.momentum *= 1.0 - alpha;
        self.average += alpha_mean * (self.typical - self.average);
    }
}

/// Measured pupil characteristics for one detected frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PupilMeasurement {
    pub cx: f64,
    pub cy: f64,
    pub circumference: f64,
    pub aspect_ratio: f64,
    pub width: f64,
    pub height: f64,
    /// Radians in [0, π).
    pub angle: f64,
    pub intensity: Option<f64>,
    pub gradient: Option<f64>,
    pub curvature: Option<f64>,
}

/// Per-frame outcome fed to the estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Detected(PupilMeasurement),
    Missed,
}

/// Frame-to-frame change of the certainty-relevant features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureDeltas {
    pub position: f64,
    pub circumference: f64,
    pub aspect_ratio: f64,
}

/// Circumference bounds the predictions are clamped to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionLimits {
    pub circumference_min: f64,
    pub circumference_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PupilState {
    pub x: FeatureTrack,
    pub y: FeatureTrack,
    pub circumference: FeatureTrack,
    pub aspect_ratio: FeatureTrack,
    pub width: FeatureTrack,
    pub height: FeatureTrack,
    pub angle: FeatureTrack,
    pub intensity: FeatureTrack,
    pub gradient: FeatureTrack,
    pub curvature: FeatureTrack,
    pub raw_position_certainty: f64,
    pub raw_appearance_certainty: f64,
    pub position_certainty: f64,
    pub appearance_certainty: f64,
}

impl PupilState {
    /// Exploratory starting state: typical appearance, zero raw certainty,
    /// position at `start` (usually the frame centre).
    pub fn initial(params: &EstimatorParams, start: (f64, f64), typical_curvature: f64) -> Self {
        let t = &params.typical;
        let diameter = t.circumference / std::f64::consts::PI;
        Self {
            x: FeatureTrack::new(start.0),
            y: FeatureTrack::new(start.1),
            circumference: FeatureTrack::new(t.circumference),
            aspect_ratio: FeatureTrack::new(t.aspect_ratio),
            width: FeatureTrack::new(diameter),
            height: FeatureTrack::new(diameter),
            angle: FeatureTrack::new(t.angle),
            intensity: FeatureTrack::new(t.intensity),
            gradient: FeatureTrack::new(t.gradient),
            curvature: FeatureTrack::new(t.curvature.unwrap_or(typical_curvature)),
            raw_position_certainty: 0.0,
            raw_appearance_certainty: 0.0,
            position_certainty: derived_certainty(0.0, params.tau),
            appearance_certainty: derived_certainty(0.0, params.tau),
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x.prediction, self.y.prediction)
    }

    pub fn set_position(&mut self, x: f64, y: f64) {
        self.x.prediction = x;
        self.y.prediction = y;
    }

    pub fn deltas(&self, m: &PupilMeasurement) -> FeatureDeltas {
        compute_deltas(m, self)
    }

    pub fn observe(&mut self, obs: &Observation, params: &EstimatorParams, limits: PredictionLimits) {
        match obs {
            Observation::Detected(m) => self.update_on_detection(m, params, limits),
            Observation::Missed => self.update_on_miss(params, limits),
        }
    }

    pub fn update_on_detection(&mut self, m: &PupilMeasurement, p: &EstimatorParams, limits: PredictionLimits) {
        let d = compute_deltas(m, self);
        self.update_with_deltas(m, d, p, limits);
    }

    /// Detection update with certainty changes driven by `d` instead of the
    /// current predictions. The pipeline passes deltas against the estimator's
    /// own forecast, since the locate stage may have moved the position since.
    pub fn update_with_deltas(
        &mut self,
        m: &PupilMeasurement,
        d: FeatureDeltas,
        p: &EstimatorParams,
        limits: PredictionLimits,
    ) {
        let (cs, ca) = (self.position_certainty, self.appearance_certainty);
        let (a_s, a_a, a_m) = (p.alpha_position, p.alpha_appearance, p.alpha_mean);

        self.x.correct(m.cx - self.x.prediction, a_s, cs, a_m);
        self.y.correct(m.cy - self.y.prediction, a_s, cs, a_m);
        self.circumference.correct(m.circumference - self.circumference.prediction, a_a, ca, a_m);
        self.aspect_ratio.correct(m.aspect_ratio - self.aspect_ratio.prediction, a_a, ca, a_m);
        self.width.correct(m.width - self.width.prediction, a_a, ca, a_m);
        self.height.correct(m.height - self.height.prediction, a_a, ca, a_m);
        self.angle.correct(axis_angle_diff(m.angle, self.angle.prediction), a_a, ca, a_m);
        for (track, value) in [
            (&mut self.intensity, m.intensity),
            (&mut self.gradient, m.gradient),
            (&mut self.curvature, m.curvature),
        ] {
            let error = value.map_or(0.0, |v| v - track.prediction);
            track.correct(error, a_a, ca, a_m);
        }

        let dc_pos = certainty_delta(d.position, p.lower.position, p.logistic_a, p.logistic_b, p.steepness);
        let dc_app = 0.5
            * (certainty_delta(d.circumference, p.lower.circumference, p.logistic_a, p.logistic_b, p.steepness)
                + certainty_delta(d.aspect_ratio, p.lower.aspect_ratio, p.logistic_a, p.logistic_b, p.steepness));
        self.apply_certainty(dc_pos, dc_app, p);
        self.clamp(limits);
    }

    /// No accepted fit: appearance relaxes towards the running averages, both
    /// certainties receive the minimum change. Position is left to the locate stage.
    pub fn update_on_miss(&mut self, p: &EstimatorParams, limits: PredictionLimits) {
        let ca = self.appearance_certainty;
        let (a_a, a_m) = (p.alpha_appearance, p.alpha_mean);
        for track in self.appearance_tracks_mut() {
            track.relax(a_a, ca, a_m);
        }
        self.apply_certainty(MISS_CERTAINTY_DELTA, MISS_CERTAINTY_DELTA, p);
        self.clamp(limits);
    }

    fn appearance_tracks_mut(&mut self) -> [&mut FeatureTrack; 8] {
        [
            &mut self.circumference,
            &mut self.aspect_ratio,
            &mut self.width,
            &mut self.height,
            &mut self.angle,
            &mut self.intensity,
            &mut self.gradient,
            &mut self.curvature,
        ]
    }

    fn apply_certainty(&mut self, dc_pos: f64, dc_app: f64, p: &EstimatorParams) {
        let (raw, c) = certainty_update(self.raw_position_certainty, dc_pos, p.alpha_position, p.alpha_certainty, p.tau);
        self.raw_position_certainty = raw;
        self.position_certainty = c;
        let (raw, c) =
            certainty_update(self.raw_appearance_certainty, dc_app, p.alpha_appearance, p.alpha_certainty, p.tau);
        self.raw_appearance_certainty = raw;
        self.appearance_certainty = c;
    }

    fn clamp(&mut self, limits: PredictionLimits) {
        let c = &mut self.circumference;
        c.prediction = c.prediction.clamp(limits.circumference_min, limits.circumference_max);
        let ar = &mut self.aspect_ratio;
        ar.prediction = ar.prediction.clamp(0.05, 1.0);
        let max_extent = limits.circumference_max / std::f64::consts::PI * 2.0;
        for t in [&mut self.width, &mut self.height] {
            t.prediction = t.prediction.clamp(1.0, max_extent);
        }
        self.angle.prediction = crate::geom::wrap_half_turn(self.angle.prediction);
        self.intensity.prediction = self.intensity.prediction.clamp(0.0, 255.0);
        self.gradient.prediction = self.gradient.prediction.clamp(-255.0, 255.0);
    }
}

/// Displacement, relative circumference change and absolute aspect-ratio change.
pub fn compute_deltas(m: &PupilMeasurement, state: &PupilState) -> FeatureDeltas {
    let c_hat = state.circumference.prediction;
    FeatureDeltas {
        position: (m.cx - state.x.prediction).hypot(m.cy - state.y.prediction),
        circumference: (m.circumference - c_hat).abs() / m.circumference.max(c_hat),
        aspect_ratio: (m.aspect_ratio - state.aspect_ratio.prediction).abs(),
    }
}
