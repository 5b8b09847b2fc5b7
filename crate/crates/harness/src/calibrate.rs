//! Calibration routines run on pipeline output: classifier score curves,
//! fit-error constants and the curvature model.

use pupiltrack::classify::{edge_score, ClassifierCalibration, EdgeSigmas, EdgeWeights, FeatureValues};
use pupiltrack::contour::{calibrate_curvature, CalibrationGrid, CurvatureModel};
use pupiltrack::ellipse::RejectReason;
use serde::{Deserialize, Serialize};

use crate::dataset::LabelRecord;
use crate::runner::FrameRun;

/// Calibration refuses corpora with fewer segmented edges than this.
pub const MIN_CLASSIFIER_EDGES: usize = 1000;

/// Fraction of pupil edges the calibrated threshold lets through.
pub const CLASSIFIER_COVERAGE: f64 = 0.99;

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error("{found} edges available, at least {needed} required")]
    TooFewEdges { found: usize, needed: usize },
    #[error("no edges belong to an accepted fit")]
    NoPositives,
    #[error("{0} usable fits, at least 3 required")]
    TooFewFits(usize),
}

/// Feature values of one segmented edge and whether it was part of an accepted fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSample {
    pub values: FeatureValues,
    pub positive: bool,
}

pub fn edge_samples(runs: &[FrameRun]) -> Vec<EdgeSample> {
    runs.iter()
        .filter_map(|r| r.trace.as_ref())
        .flat_map(|t| t.segments.iter().map(|s| EdgeSample { values: s.values, positive: s.fit_member }))
        .collect()
}

/// Zero-centred Gaussian with unit peak fitted by maximum likelihood: σ² = mean(x²).
pub fn fit_zero_centred_sigma(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v * v;
        n += 1;
    }
    (n > 0).then(|| (s / n as f64).sqrt().max(1e-6))
}

/// Nearest-rank lower quantile.
pub fn lower_quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = ((q * v.len() as f64).floor() as usize).min(v.len() - 1);
    Some(v[k])
}

/// Full-certainty normalized scores of the pupil edges.
pub fn positive_scores(samples: &[EdgeSample], sigmas: &EdgeSigmas, weights: &EdgeWeights) -> Vec<f64> {
    samples.iter().filter(|s| s.positive).map(|s| edge_score(&s.values, sigmas, weights, 1.0, 1.0).normalized()).collect()
}

/// Fits each feature's score curve to the pupil edges only, then sets the
/// threshold so that `CLASSIFIER_COVERAGE` of them pass at full certainty.
/// Features with no observations keep their `fallback` width.
pub fn calibrate_classifier(
    samples: &[EdgeSample],
    weights: &EdgeWeights,
    fallback: &EdgeSigmas,
) -> Result<ClassifierCalibration, CalibrationError> {
    if samples.len() < MIN_CLASSIFIER_EDGES {
        return Err(CalibrationError::TooFewEdges { found: samples.len(), needed: MIN_CLASSIFIER_EDGES });
    }
    let pos: Vec<&FeatureValues> = samples.iter().filter(|s| s.positive).map(|s| &s.values).collect();
    if pos.is_empty() {
        return Err(CalibrationError::NoPositives);
    }
    let fit = |get: fn(&FeatureValues) -> Option<f64>, fb: f64| fit_zero_centred_sigma(pos.iter().filter_map(|v| get(v))).unwrap_or(fb);
    let sigmas = EdgeSigmas {
        length: fit(|v| Some(v.length), fallback.length),
        radius: fit(|v| Some(v.radius), fallback.radius),
        radius_spread: fit(|v| Some(v.radius_spread), fallback.radius_spread),
        curvature: fit(|v| v.curvature, fallback.curvature),
        gradient: fit(|v| v.gradient, fallback.gradient),
        intensity: fit(|v| v.intensity, fallback.intensity),
    };
    let scores = positive_scores(samples, &sigmas, weights);
    let threshold = lower_quantile(&scores, 1.0 - CLASSIFIER_COVERAGE).expect("positives present");
    // Stored with six decimals; round down so the stored value admits the same edges.
    let threshold = (threshold * 1e6).floor() / 1e6;
    Ok(ClassifierCalibration { threshold, sigmas })
}

/// Fraction of pupil edges scoring at or above the calibration threshold at full certainty.
pub fn classifier_pass_rate(samples: &[EdgeSample], cal: &ClassifierCalibration, weights: &EdgeWeights) -> Option<f64> {
    let scores = positive_scores(samples, &cal.sigmas, weights);
    (!scores.is_empty()).then(|| scores.iter().filter(|&&s| s >= cal.threshold).count() as f64 / scores.len() as f64)
}

/// One fitted candidate with its ground-truth verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    pub error_abs: f64,
    pub circumference: f64,
    /// Centre within one pixel of the label and circumference within 5%.
    pub good: bool,
}

pub fn fit_samples(runs: &[FrameRun], labels: &[LabelRecord]) -> Vec<FitSample> {
    let by_frame: std::collections::HashMap<usize, &LabelRecord> = labels.iter().map(|l| (l.frame, l)).collect();
    let mut out = Vec::new();
    for r in runs {
        let (Some(t), Some(l)) = (r.trace.as_ref(), by_frame.get(&r.result.frame)) else { continue };
        let truth_c = pupiltrack::ellipse::ramanujan_circumference(l.a, l.b);
        for c in &t.candidates {
            if matches!(c.reject, Some(RejectReason::FitFailed | RejectReason::TimeBudget)) {
                continue;
            }
            let Some(p) = c.params else { continue };
            let d = ((p.cx - l.cx).powi(2) + (p.cy - l.cy).powi(2)).sqrt();
            let good = d <= 1.0 && (p.circumference - truth_c).abs() <= 0.05 * truth_c;
            out.push(FitSample { error_abs: c.error_abs, circumference: p.circumference, good });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitErrorCalibration {
    /// Intercept of the least-squares line `ε_abs = α + slope·C` over good fits.
    pub intercept: f64,
    pub slope: f64,
    /// Smallest relative-error threshold that keeps 99.5% of good fits.
    pub threshold: f64,
    pub good_fits: usize,
    /// Fraction of the other fits that the threshold rejects.
    pub bad_rejected: f64,
}

impl FitErrorCalibration {
    pub fn to_toml(&self) -> String {
        format!(
            "# {} good fits, slope {:.6} px per px of circumference, {:.1}% of other fits rejected\n\
             [ellipse.filters]\nerror_intercept = {:.6}\nerror_threshold = {:.6}\n",
            self.good_fits,
            self.slope,
            100.0 * self.bad_rejected,
            self.intercept,
            self.threshold
        )
    }
}

pub fn calibrate_fit_error(samples: &[FitSample]) -> Result<FitErrorCalibration, CalibrationError> {
    let good: Vec<&FitSample> = samples.iter().filter(|s| s.good).collect();
    if good.len() < 3 {
        return Err(CalibrationError::TooFewFits(good.len()));
    }
    let n = good.len() as f64;
    let mx = good.iter().map(|s| s.circumference).sum::<f64>() / n;
    let my = good.iter().map(|s| s.error_abs).sum::<f64>() / n;
    let sxx: f64 = good.iter().map(|s| (s.circumference - mx).powi(2)).sum();
    let sxy: f64 = good.iter().map(|s| (s.circumference - mx) * (s.error_abs - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rel = |s: &FitSample| (s.error_abs - intercept) / s.circumference;
    let mut good_rel: Vec<f64> = good.iter().map(|s| rel(s)).collect();
    good_rel.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = ((0.995 * good_rel.len() as f64).ceil() as usize).clamp(1, good_rel.len());
    let threshold = good_rel[k - 1];
    let bad: Vec<f64> = samples.iter().filter(|s| !s.good).map(rel).collect();
    let bad_rejected =
        if bad.is_empty() { 0.0 } else { bad.iter().filter(|&&e| e > threshold).count() as f64 / bad.len() as f64 };
    Ok(FitErrorCalibration { intercept, slope, threshold, good_fits: good.len(), bad_rejected })
}

/// Regenerates the curvature model on the default grid.
pub fn regenerate_curvature_model() -> CurvatureModel {
    calibrate_curvature(&CalibrationGrid::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(length: f64, positive: bool) -> EdgeSample {
        EdgeSample {
            values: FeatureValues {
                length,
                radius: length / 2.0,
                radius_spread: 0.01,
                curvature: Some(1.0),
                gradient: None,
                intensity: Some(10.0),
            },
            positive,
        }
    }

    #[test]
    fn half_normal_sigma() {
        assert_eq!(fit_zero_centred_sigma([3.0, 4.0, 0.0]), Some((25.0f64 / 3.0).sqrt()));
        assert_eq!(fit_zero_centred_sigma(std::iter::empty()), None);
    }

    #[test]
    fn refuses_small_corpora() {
        let s: Vec<EdgeSample> = (0..999).map(|i| sample(i as f64 / 999.0, true)).collect();
        let r = calibrate_classifier(&s, &EdgeWeights::default(), &EdgeSigmas::default());
        assert!(matches!(r, Err(CalibrationError::TooFewEdges { found: 999, .. })));
    }

    #[test]
    fn single_class_corpus_calibrates() {
        let s: Vec<EdgeSample> = (0..1200).map(|i| sample((i % 100) as f64 / 200.0, true)).collect();
        let w = EdgeWeights::default();
        let cal = calibrate_classifier(&s, &w, &EdgeSigmas::default()).unwrap();
        assert!(cal.sigmas.radius.is_finite() && cal.sigmas.radius > 0.0);
        assert_eq!(cal.sigmas.gradient, EdgeSigmas::default().gradient);
        assert!(classifier_pass_rate(&s, &cal, &w).unwrap() >= CLASSIFIER_COVERAGE);
    }

    #[test]
    fn negatives_do_not_move_sigmas() {
        let mut s: Vec<EdgeSample> = (0..1200).map(|i| sample((i % 100) as f64 / 200.0, true)).collect();
        let w = EdgeWeights::default();
        let a = calibrate_classifier(&s, &w, &EdgeSigmas::default()).unwrap();
        s.extend((0..500).map(|_| sample(0.9, false)));
        let b = calibrate_classifier(&s, &w, &EdgeSigmas::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_error_line() {
        let s: Vec<FitSample> = (0..50)
            .map(|i| {
                let c = 60.0 + 4.0 * i as f64;
                FitSample { error_abs: -0.5 + 0.01 * c, circumference: c, good: true }
            })
            .chain([FitSample { error_abs: 20.0, circumference: 100.0, good: false }])
            .collect();
        let cal = calibrate_fit_error(&s).unwrap();
        assert!((cal.intercept + 0.5).abs() < 1e-9 && (cal.slope - 0.01).abs() < 1e-12);
        assert!((cal.threshold - 0.01).abs() < 1e-9);
        assert_eq!(cal.bad_rejected, 1.0);
        assert!(calibrate_fit_error(&s[..2]).is_err());
    }
}
