//! Edge features, certainty-weighted scoring and the pupil/non-pupil decision.

use serde::{Deserialize, Serialize};

use crate::contour::{Chain, CurvatureProfile};
use crate::geom::{gaussian_score, Vec2};
use crate::raster::GrayImage;

/// Distance in pixels of the gradient and intensity probes from each edge point.
pub const PROBE_DISTANCE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeFeatures {
    pub length: f64,
    /// Mean distance of the edge points to the predicted centre.
    pub radius: f64,
    /// Standard deviation of that distance.
    pub radius_spread: f64,
    /// Mean curvature in degrees per point; absent when the edge is too short for a profile.
    pub curvature: Option<f64>,
    /// Mean outward radial gradient; absent when every probe left the image.
    pub gradient: Option<f64>,
    /// Mean brightness on the inside of the curve; absent when every probe left the image.
    pub intensity: Option<f64>,
}

fn probe(img: &GrayImage, p: Vec2) -> Option<f64> {
    let q = p.round();
    img.get_checked(q.x, q.y).map(f64::from)
}

/// Features of an ordered edge, with `centre` and `img` in the edge's coordinates.
/// Points without a profile entry probe intensity towards the centre.
pub fn edge_features(chain: &Chain, centre: Vec2, img: &GrayImage, profile: Option<&CurvatureProfile>) -> EdgeFeatures {
    let n = chain.points.len().max(1) as f64;
    let dists: Vec<f64> = chain.points.iter().map(|p| p.to_vec().dist(centre)).collect();
    let radius = dists.iter().sum::<f64>() / n;
    let radius_spread = (dists.iter().map(|d| (d - radius).powi(2)).sum::<f64>() / n).sqrt();

    let (mut g_sum, mut g_n) = (0.0, 0usize);
    for p in &chain.points {
        let pv = p.to_vec();
        let u = (pv - centre).normalized();
        if u == Vec2::ZERO {
            continue;
        }
        if let (Some(outer), Some(inner)) = (probe(img, pv + u * PROBE_DISTANCE), probe(img, pv - u * PROBE_DISTANCE)) {
            g_sum += outer - inner;
            g_n += 1;
        }
    }

    let mut inward: Vec<Option<Vec2>> = vec![None; chain.points.len()];
    let profile = profile.filter(|p| !p.is_empty());
    if let Some(prof) = profile {
        for q in &prof.points {
            if q.inward != Vec2::ZERO {
                inward[q.index] = Some(q.inward);
            }
        }
    }
    let (mut i_sum, mut i_n) = (0.0, 0usize);
    for (k, p) in chain.points.iter().enumerate() {
        let pv = p.to_vec();
        let dir = inward[k].unwrap_or_else(|| (centre - pv).normalized());
        if dir == Vec2::ZERO {
            continue;
        }
        if let Some(v) = probe(img, pv + dir * PROBE_DISTANCE) {
            i_sum += v;
            i_n += 1;
        }
    }

    EdgeFeatures {
        length: chain.length(),
        radius,
        radius_spread,
        curvature: profile.and_then(CurvatureProfile::mean_kappa),
        gradient: (g_n > 0).then(|| g_sum / g_n as f64),
        intensity: (i_n > 0).then(|| i_sum / i_n as f64),
    }
}

/// Predicted pupil quantities that edge features are compared against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgePrediction {
    pub circumference: f64,
    pub curvature: f64,
    pub gradient: f64,
    pub intensity: f64,
}

/// Normalized feature values; a `None` term is left out of the score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureValues {
    pub length: f64,
    pub radius: f64,
    pub radius_spread: f64,
    pub curvature: Option<f64>,
    pub gradient: Option<f64>,
    pub intensity: Option<f64>,
}

fn rel_diff(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

pub fn feature_values(f: &EdgeFeatures, pred: &EdgePrediction) -> FeatureValues {
    let c = pred.circumference;
    FeatureValues {
        length: rel_diff(f.length, c),
        radius: rel_diff(f.radius, c / std::f64::consts::TAU),
        radius_spread: f.radius_spread / c,
        curvature: f.curvature.map(|k| (k - pred.curvature).abs()),
        gradient: f.gradient.map(|g| (g - pred.gradient).abs()),
        intensity: f.intensity.map(|i| (i - pred.intensity).abs()),
    }
}

/// Feature values of a tail measured against the body of the same edge.
pub fn tail_feature_values(tail: &EdgeFeatures, body: &EdgeFeatures, c_hat: f64) -> FeatureValues {
    let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| (a - b).abs());
    FeatureValues {
        length: rel_diff(tail.length, c_hat),
        radius: rel_diff(tail.radius, body.radius),
        radius_spread: (tail.radius_spread - body.radius_spread).abs() / c_hat,
        curvature: diff(tail.curvature, body.curvature),
        gradient: diff(tail.gradient, body.gradient),
        intensity: diff(tail.intensity, body.intensity),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdgeWeights {
    pub length: f64,
    pub radius: f64,
    pub radius_spread: f64,
    pub curvature: f64,
    pub gradient: f64,
    pub intensity: f64,
    pub beta: f64,
    pub threshold: f64,
}

impl Default for EdgeWeights {
    fn default() -> Self {
        Self {
            length: 0.7,
            radius: 0.9,
            radius_spread: 1.2,
            curvature: 1.4,
            gradient: 0.7,
            intensity: 1.4,
            beta: 0.9,
            threshold: 0.38,
        }
    }
}

/// Standard deviations of the per-feature score curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdgeSigmas {
    pub length: f64,
    pub radius: f64,
    pub radius_spread: f64,
    pub curvature: f64,
    pub gradient: f64,
    pub intensity: f64,
}

impl Default for EdgeSigmas {
    fn default() -> Self {
        Self { length: 0.25, radius: 0.12, radius_spread: 0.05, curvature: 5.0, gradient: 25.0, intensity: 25.0 }
    }
}

impl EdgeSigmas {
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            length: self.length * factor,
            radius: self.radius * factor,
            radius_spread: self.radius_spread * factor,
            curvature: self.curvature * factor,
            gradient: self.gradient * factor,
            intensity: self.intensity * factor,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [self.length, self.radius, self.radius_spread, self.curvature, self.gradient, self.intensity];
        if all.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err("classifier sigmas must be positive and finite".into())
        }
    }
}

/// Widening of the score curves at frame rates below the reference rate.
pub fn frame_rate_factor(fps: f64, reference_fps: f64) -> f64 {
    (reference_fps / fps).clamp(1.0, 4.0)
}

/// Calibrated score curves and threshold, stored as `key = value` lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierCalibration {
    pub threshold: f64,
    pub sigmas: EdgeSigmas,
}

impl Default for ClassifierCalibration {
    fn default() -> Self {
        Self { threshold: EdgeWeights::default().threshold, sigmas: EdgeSigmas::default() }
    }
}

impl ClassifierCalibration {
    pub fn parse(text: &str) -> Result<Self, String> {
        let c: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        c.sigmas.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("calibration serializes")
    }
}

/// Summed weighted score and the attainable maximum for the same weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub total: f64,
    pub max: f64,
}

impl Score {
    /// Score in [0, 1]; zero when every weight vanished.
    pub fn normalized(&self) -> f64 {
        if self.max > 0.0 {
            self.total / self.max
        } else {
            0.0
        }
    }
}

fn combine(terms: &[(f64, Option<f64>, f64)]) -> Score {
    let mut total = 0.0;
    let mut max = 0.0;
    for &(w, f, sigma) in terms {
        if let Some(f) = f {
            total += w * gaussian_score(f, sigma);
            max += w;
        }
    }
    Score { total, max }
}

/// Certainty-weighted classification score.
pub fn edge_score(fv: &FeatureValues, sigmas: &EdgeSigmas, weights: &EdgeWeights, c_s: f64, c_a: f64) -> Score {
    let damp = 1.0 - weights.beta * fv.length;
    combine(&[
        (c_a * weights.length, Some(fv.length), sigmas.length),
        (c_s * weights.radius, Some(fv.radius), sigmas.radius),
        (c_s * damp * weights.radius_spread, Some(fv.radius_spread), sigmas.radius_spread),
        (c_a * damp * weights.curvature, fv.curvature, sigmas.curvature),
        (c_s * c_a * weights.gradient, fv.gradient, sigmas.gradient),
        (c_a * weights.intensity, fv.intensity, sigmas.intensity),
    ])
}

/// Similarity score of a tail to its body; length carries no weight and
/// appearance certainties are taken as 1.
pub fn tail_score(fv: &FeatureValues, sigmas: &EdgeSigmas, weights: &EdgeWeights, c_s: f64) -> Score {
    let damp = 1.0 - weights.beta * fv.length;
    combine(&[
        (c_s * weights.radius, Some(fv.radius), sigmas.radius),
        (c_s * damp * weights.radius_spread, Some(fv.radius_spread), sigmas.radius_spread),
        (damp * weights.curvature, fv.curvature, sigmas.curvature),
        (c_s * weights.gradient, fv.gradient, sigmas.gradient),
        (weights.intensity, fv.intensity, sigmas.intensity),
    ])
}

/// Certainty-scaled acceptance threshold.
pub fn score_threshold(threshold: f64, c_s: f64, c_a: f64) -> f64 {
    c_s * c_a * threshold
}

/// Indices of edges whose normalized score reaches the threshold, best first;
/// equal scores keep input order.
pub fn classify_edges(scores: &[f64], threshold: f64, c_s: f64, c_a: f64) -> Vec<usize> {
    let t = score_threshold(threshold, c_s, c_a);
    let mut keep: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
    keep.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap().then(i.cmp(&j)));
    keep
}
