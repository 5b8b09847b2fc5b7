//! Direct least-squares ellipse fitting over combinations of pupil edges,
//! the plausibility filters, fit scoring and the final averaged measurement.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{axis_angle_diff, gaussian_score, wrap_half_turn, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum FitError {
    #[error("fewer than five points")]
    TooFewPoints,
    #[error("point set is degenerate")]
    Degenerate,
    #[error("conic is not an ellipse")]
    NotEllipse,
}

/// Ellipse in image coordinates. `angle` is the orientation of the major axis in [0, π).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseParams {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
    pub aspect_ratio: f64,
    pub circumference: f64,
    pub width: f64,
    pub height: f64,
}

impl EllipseParams {
    pub fn from_axes(cx: f64, cy: f64, a: f64, b: f64, angle: f64) -> Self {
        let (a, b, angle) = if b > a { (b, a, angle + std::f64::consts::FRAC_PI_2) } else { (a, b, angle) };
        let angle = wrap_half_turn(angle);
        let (s, c) = angle.sin_cos();
        Self {
            cx,
            cy,
            a,
            b,
            angle,
            aspect_ratio: b / a,
            circumference: ramanujan_circumference(a, b),
            width: 2.0 * (a * a * c * c + b * b * s * s).sqrt(),
            height: 2.0 * (a * a * s * s + b * b * c * c).sqrt(),
        }
    }

    pub fn centre(&self) -> Vec2 {
        Vec2::new(self.cx, self.cy)
    }
}

/// Ramanujan's second perimeter approximation.
pub fn ramanujan_circumference(a: f64, b: f64) -> f64 {
    let h = ((a - b) / (a + b)).powi(2);
    std::f64::consts::PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
}

/// Conic `A x² + B xy + C y² + D x + E y + F = 0` in coordinates normalized by
/// `(p − origin)·scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic {
    pub coeffs: [f64; 6],
    pub origin: Vec2,
    pub scale: f64,
}

impl Conic {
    /// Gradient-normalized algebraic distance of `p`, in pixels.
    pub fn distance(&self, p: Vec2) -> f64 {
        let [a, b, c, d, e, f] = self.coeffs;
        let x = (p.x - self.origin.x) * self.scale;
        let y = (p.y - self.origin.y) * self.scale;
        let q = a * x * x + b * x * y + c * y * y + d * x + e * y + f;
        let gx = 2.0 * a * x + b * y + d;
        let gy = b * x + 2.0 * c * y + e;
        let g = gx.hypot(gy);
        if g > 0.0 {
            q.abs() / g / self.scale
        } else {
            f64::INFINITY
        }
    }

    pub fn params(&self) -> Result<EllipseParams, FitError> {
        let [a, b, c, d, e, f] = self.coeffs;
        let det = 4.0 * a * c - b * b;
        if det <= 0.0 {
            return Err(FitError::NotEllipse);
        }
        let x0 = (b * e - 2.0 * c * d) / det;
        let y0 = (b * d - 2.0 * a * e) / det;
        let f0 = a * x0 * x0 + b * x0 * y0 + c * y0 * y0 + d * x0 + e * y0 + f;
        // Eigenvalues of [[A, B/2], [B/2, C]].
        let mean = 0.5 * (a + c);
        let diff = (0.25 * (a - c) * (a - c) + 0.25 * b * b).sqrt();
        let (l_small, l_big) = (mean - diff, mean + diff);
        let s1 = -f0 / l_small;
        let s2 = -f0 / l_big;
        if !(s1 > 0.0 && s2 > 0.0) || !s1.is_finite() || !s2.is_finite() {
            return Err(FitError::NotEllipse);
        }
        // The smaller eigenvalue belongs to the major axis.
        let angle = if b.abs() < 1e-15 * (a.abs() + c.abs()) {
            if a <= c {
                0.0
            } else {
                std::f64::consts::FRAC_PI_2
            }
        } else {
            (l_small - a).atan2(b / 2.0)
        };
        let inv = 1.0 / self.scale;
        Ok(EllipseParams::from_axes(
            x0 * inv + self.origin.x,
            y0 * inv + self.origin.y,
            s1.sqrt() * inv,
            s2.sqrt() * inv,
            angle,
        ))
    }
}

/// Ellipse-specific direct least-squares fit (constraint 4AC − B² = 1),
/// solved with the partitioned scatter matrix for numerical stability.
pub fn fit_conic_raw(points: &[Vec2]) -> Result<Conic, FitError> {
    if points.len() < 5 {
        return Err(FitError::TooFewPoints);
    }
    let n = points.len() as f64;
    let origin = points.iter().fold(Vec2::ZERO, |s, p| s + *p) * (1.0 / n);
    let rms = (points.iter().map(|p| (*p - origin).norm().powi(2)).sum::<f64>() / n).sqrt();
    if rms < 1e-9 {
        return Err(FitError::Degenerate);
    }
    let scale = std::f64::consts::SQRT_2 / rms;
    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let x = (p.x - origin.x) * scale;
        let y = (p.y - origin.y) * scale;
        let d1 = Vector3::new(x * x, x * y, y * y);
        let d2 = Vector3::new(x, y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    let s3_inv = s3.try_inverse().ok_or(FitError::Degenerate)?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // Premultiply by the inverse of the constraint block [[0,0,2],[0,-1,0],[2,0,0]].
    let reduced = Matrix3::from_rows(&[m.row(2) * 0.5, -m.row(1), m.row(0) * 0.5]);
    if !reduced.iter().all(|v| v.is_finite()) {
        return Err(FitError::Degenerate);
    }
    let eig = nalgebra::Schur::new(reduced).eigenvalues().ok_or(FitError::NotEllipse)?;
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for &lambda in eig.iter() {
        let shifted = reduced - Matrix3::identity() * lambda;
        let rows = [shifted.row(0).transpose(), shifted.row(1).transpose(), shifted.row(2).transpose()];
        let mut v = Vector3::zeros();
        let mut vn = 0.0;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let c = rows[i].cross(&rows[j]);
            if c.norm() > vn {
                vn = c.norm();
                v = c;
            }
        }
        if vn == 0.0 {
            continue;
        }
        let v = v / vn;
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 && best.is_none_or(|(bc, _)| cond > bc) {
            best = Some((cond, v));
        }
    }
    let (_, a1) = best.ok_or(FitError::NotEllipse)?;
    let a2 = t * a1;
    Ok(Conic { coeffs: [a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]], origin, scale })
}

pub fn fit_conic(points: &[Vec2]) -> Result<EllipseParams, FitError> {
    fit_conic_raw(points)?.params()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitFilters {
    pub circumference_min: f64,
    pub circumference_max: f64,
    pub aspect_ratio_min: f64,
    /// Slope of the aspect-dependent circumference ceiling.
    pub circumference_slope: f64,
    pub error_intercept: f64,
    pub error_threshold: f64,
    /// Fraction of the circumference giving the number of worst points averaged for the fit error.
    pub outlier_fraction: f64,
    pub length_floor: f64,
    pub score_margin: f64,
    pub max_fits: usize,
    pub max_edges: usize,
}

impl Default for FitFilters {
    fn default() -> Self {
        Self {
            circumference_min: 60.0,
            circumference_max: 290.0,
            aspect_ratio_min: 0.4,
            circumference_slope: 154.0,
            error_intercept: -0.56,
            error_threshold: 0.6,
            outlier_fraction: 0.05,
            length_floor: 0.3,
            score_margin: 0.10,
            max_fits: 6,
            max_edges: 4,
        }
    }
}

impl FitFilters {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.circumference_min > 0.0 && self.circumference_min < self.circumference_max) {
            return Err("ellipse filters need 0 < circumference_min < circumference_max".into());
        }
        if !(0.0..=1.0).contains(&self.aspect_ratio_min) {
            return Err("ellipse.aspect_ratio_min must lie in [0, 1]".into());
        }
        if self.error_threshold <= 0.0 || self.outlier_fraction <= 0.0 || self.max_fits == 0 || self.max_edges == 0 {
            return Err("ellipse error threshold, outlier fraction, max_fits and max_edges must be positive".into());
        }
        Ok(())
    }

    /// Aspect-dependent circumference ceiling.
    pub fn circumference_ceiling(&self, aspect_ratio: f64) -> f64 {
        self.circumference_slope * (aspect_ratio - 1.0) + self.circumference_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitWeights {
    pub circumference: f64,
    pub aspect_ratio: f64,
    pub length: f64,
    pub error: f64,
    pub angle: f64,
    pub rho: f64,
}

impl Default for FitWeights {
    fn default() -> Self {
        Self { circumference: 0.4, aspect_ratio: 0.6, length: 1.6, error: 0.9, angle: 1.5, rho: 0.7 }
    }
}

/// Standard deviations of the fit score curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSigmas {
    pub circumference: f64,
    pub aspect_ratio: f64,
    pub length: f64,
    pub error: f64,
    pub angle: f64,
}

impl Default for FitSigmas {
    fn default() -> Self {
        Self { circumference: 0.12, aspect_ratio: 0.08, length: 0.30, error: 0.30, angle: 0.35 }
    }
}

/// Predicted pupil quantities the fits are compared against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitContext {
    pub circumference: f64,
    pub aspect_ratio: f64,
    pub width: f64,
    pub height: f64,
    pub angle: f64,
    pub delta_c: f64,
    pub delta_ar: f64,
    pub appearance_certainty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    FitFailed,
    CircumferenceRange,
    AspectRatio,
    CircumferenceCeiling,
    CircumferenceChange,
    AspectChange,
    EdgeLength,
    FitError,
    TimeBudget,
}

/// One edge combination that may be fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitCandidate {
    /// Indices into the classified edge list.
    pub members: Vec<usize>,
    /// Combined step length of the member edges.
    pub length: f64,
    #[serde(skip)]
    pub points: Vec<Vec2>,
    pub params: Option<EllipseParams>,
    pub error_abs: f64,
    pub error_rel: f64,
    pub score: f64,
    pub reject: Option<RejectReason>,
}

fn extent(points: &[Vec2]) -> (f64, f64) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    (x1 - x0, y1 - y0)
}

/// All non-empty subsets of the given edges (each a point list with its
/// length), without any filtering. Subset `k` contains edge `i` when bit `i` of `k + 1` is set.
pub fn edge_subsets(count: usize) -> Vec<Vec<usize>> {
    (1u32..(1u32 << count)).map(|mask| (0..count).filter(|i| mask & (1 << i) != 0).collect()).collect()
}

/// Subsets of the edges whose combined extent matches the predicted size,
/// reduced to the `max_fits` with combined length closest to the predicted circumference.
pub fn enumerate_candidates(edges: &[(Vec<Vec2>, f64)], ctx: &FitContext, filters: &FitFilters) -> Vec<FitCandidate> {
    let n = edges.len().min(filters.max_edges);
    let dl = ctx.circumference * ctx.delta_c / std::f64::consts::PI;
    let mut out: Vec<FitCandidate> = Vec::new();
    for members in edge_subsets(n) {
        let points: Vec<Vec2> = members.iter().flat_map(|&i| edges[i].0.iter().copied()).collect();
        let (ex, ey) = extent(&points);
        let fits_w = ex >= 0.3 * (ctx.width - dl) && ex <= ctx.width + dl;
        let fits_h = ey >= 0.3 * (ctx.height - dl) && ey <= ctx.height + dl;
        if !(fits_w && fits_h) {
            continue;
        }
        let length = members.iter().map(|&i| edges[i].1).sum();
        out.push(FitCandidate {
            members,
            length,
            points,
            params: None,
            error_abs: 0.0,
            error_rel: 0.0,
            score: 0.0,
            reject: None,
        });
    }
    keep_nearest(&mut out, ctx.circumference, filters.max_fits);
    out
}

/// Keeps the `max` candidates whose length is closest to `target`; ties keep enumeration order.
pub fn keep_nearest(cands: &mut Vec<FitCandidate>, target: f64, max: usize) {
    if cands.len() <= max {
        return;
    }
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&i, &j| {
        let (di, dj) = ((cands[i].length - target).abs(), (cands[j].length - target).abs());
        di.partial_cmp(&dj).unwrap().then(i.cmp(&j))
    });
    let mut keep: Vec<usize> = order.into_iter().take(max).collect();
    keep.sort_unstable();
    let mut idx = 0;
    cands.retain(|_| {
        let k = keep.contains(&idx);
        idx += 1;
        k
    });
}

/// Mean of the `⌈fraction·C⌉` largest point distances, made relative to the circumference.
pub fn relative_fit_error(conic: &Conic, points: &[Vec2], circumference: f64, filters: &FitFilters) -> (f64, f64) {
    let mut d: Vec<f64> = points.iter().map(|p| conic.distance(*p)).collect();
    d.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let k = ((filters.outlier_fraction * circumference).ceil() as usize).clamp(1, d.len().max(1));
    let abs = d.iter().take(k).sum::<f64>() / k as f64;
    (abs, (abs - filters.error_intercept) / circumference)
}

/// First failing filter for a fitted candidate.
pub fn apply_filters(
    p: &EllipseParams,
    length: f64,
    error_rel: f64,
    ctx: &FitContext,
    filters: &FitFilters,
) -> Option<RejectReason> {
    let c = p.circumference;
    if c < filters.circumference_min || c > filters.circumference_max {
        return Some(RejectReason::CircumferenceRange);
    }
    if p.aspect_ratio < filters.aspect_ratio_min {
        return Some(RejectReason::AspectRatio);
    }
    if c > filters.circumference_ceiling(p.aspect_ratio) {
        return Some(RejectReason::CircumferenceCeiling);
    }
    if (c - ctx.circumference).abs() / c.max(ctx.circumference) > ctx.delta_c {
        return Some(RejectReason::CircumferenceChange);
    }
    if (p.aspect_ratio - ctx.aspect_ratio).abs() > ctx.delta_ar {
        return Some(RejectReason::AspectChange);
    }
    if length < filters.length_floor * ctx.circumference * (1.0 - ctx.delta_c) {
        return Some(RejectReason::EdgeLength);
    }
    if !(error_rel <= filters.error_threshold) {
        return Some(RejectReason::FitError);
    }
    None
}

/// Fits and filters each candidate. After the first fit, remaining
/// candidates are skipped once `deadline` has passed.
pub fn fit_candidates(cands: &mut [FitCandidate], ctx: &FitContext, filters: &FitFilters, deadline: Option<Instant>) {
    let mut fitted = 0;
    for cand in cands.iter_mut() {
        if fitted > 0 && deadline.is_some_and(|d| Instant::now() > d) {
            cand.reject = Some(RejectReason::TimeBudget);
            continue;
        }
        fitted += 1;
        let conic = match fit_conic_raw(&cand.points) {
            Ok(c) => c,
            Err(_) => {
                cand.reject = Some(RejectReason::FitFailed);
                continue;
            }
        };
        let Ok(params) = conic.params() else {
            cand.reject = Some(RejectReason::FitFailed);
            continue;
        };
        let (abs, rel) = relative_fit_error(&conic, &cand.points, params.circumference, filters);
        cand.params = Some(params);
        cand.error_abs = abs;
        cand.error_rel = rel;
        cand.reject = apply_filters(&params, cand.length, rel, ctx, filters);
    }
}

/// Normalized weighted score of a fitted candidate.
pub fn fit_score(
    p: &EllipseParams,
    length: f64,
    error_rel: f64,
    ctx: &FitContext,
    weights: &FitWeights,
    sigmas: &FitSigmas,
) -> f64 {
    let ca = ctx.appearance_certainty;
    let c_hat = ctx.circumference;
    let f_c = (p.circumference - c_hat).abs() / p.circumference.max(c_hat);
    let f_ar = (p.aspect_ratio - ctx.aspect_ratio).abs();
    let f_l = (length - c_hat).abs() / length.max(c_hat);
    let f_theta = axis_angle_diff(p.angle, ctx.angle).abs();
    let terms = [
        (ca * weights.circumference, gaussian_score(f_c, sigmas.circumference)),
        (ca * weights.aspect_ratio, gaussian_score(f_ar, sigmas.aspect_ratio)),
        (ca * weights.length, gaussian_score(f_l, sigmas.length)),
        (weights.error, gaussian_score(error_rel, sigmas.error)),
        (ca * (1.0 - weights.rho * p.aspect_ratio) * weights.angle, gaussian_score(f_theta, sigmas.angle)),
    ];
    let total: f64 = terms.iter().map(|t| t.0).sum();
    if total <= 0.0 {
        return 0.0;
    }
    terms.iter().map(|t| t.0 * t.1).sum::<f64>() / total
}

/// Averages centre, axes and (circularly) orientation; circumference and
/// aspect ratio are recomputed from the averaged axes.
pub fn average_fits(fits: &[EllipseParams]) -> EllipseParams {
    let n = fits.len() as f64;
    let (mut cx, mut cy, mut a, mut b, mut s, mut c) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for f in fits {
        cx += f.cx;
        cy += f.cy;
        a += f.a;
        b += f.b;
        s += (2.0 * f.angle).sin();
        c += (2.0 * f.angle).cos();
    }
    let angle = if s == 0.0 && c == 0.0 { fits[0].angle } else { 0.5 * s.atan2(c) };
    EllipseParams::from_axes(cx / n, cy / n, a / n, b / n, angle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSelection {
    pub params: EllipseParams,
    /// Candidate indices averaged into the measurement, best first.
    pub accepted: Vec<usize>,
}

/// Scores surviving candidates and averages every fit within `score_margin` of the best.
pub fn score_and_select(
    cands: &mut [FitCandidate],
    ctx: &FitContext,
    weights: &FitWeights,
    sigmas: &FitSigmas,
    filters: &FitFilters,
) -> Option<FitSelection> {
    let mut alive: Vec<usize> = Vec::new();
    for (i, cand) in cands.iter_mut().enumerate() {
        if cand.reject.is_some() {
            continue;
        }
        let Some(p) = cand.params else { continue };
        cand.score = fit_score(&p, cand.length, cand.error_rel, ctx, weights, sigmas);
        alive.push(i);
    }
    alive.sort_by(|&i, &j| cands[j].score.partial_cmp(&cands[i].score).unwrap().then(i.cmp(&j)));
    let best = *alive.first()?;
    let top = cands[best].score;
    let accepted: Vec<usize> = alive.into_iter().filter(|&i| cands[i].score >= top - filters.score_margin).collect();
    let fits: Vec<EllipseParams> = accepted.iter().map(|&i| cands[i].params.unwrap()).collect();
    let params = if fits.len() == 1 { fits[0] } else { average_fits(&fits) };
    Some(FitSelection { params, accepted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sample(cx: f64, cy: f64, a: f64, b: f64, theta: f64, n: usize, from: f64, to: f64) -> Vec<Vec2> {
        (0..n)
            .map(|k| {
                let t = from + (to - from) * k as f64 / n as f64;
                let (s, c) = theta.sin_cos();
                let (u, v) = (a * t.cos(), b * t.sin());
                Vec2::new(cx + u * c - v * s, cy + u * s + v * c)
            })
            .collect()
    }

    /// Adaptive Simpson integration of the perimeter integrand.
    fn quadrature_perimeter(a: f64, b: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, eps: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (l, r) = (simpson(f, a, m), simpson(f, m, b));
            if depth == 0 || (l + r - whole).abs() <= 15.0 * eps {
                l + r + (l + r - whole) / 15.0
            } else {
                adapt(f, a, m, l, eps / 2.0, depth - 1) + adapt(f, m, b, r, eps / 2.0, depth - 1)
            }
        }
        let f = |t: f64| (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt();
        let whole = simpson(&f, 0.0, PI / 2.0);
        4.0 * adapt(&f, 0.0, PI / 2.0, whole, 1e-12, 40)
    }

    #[test]
    fn ramanujan_examples() {
        assert!((ramanujan_circumference(10.0, 10.0) - 62.83185307).abs() < 1e-6);
        for (a, b, tol) in [(10.0, 5.0, 1e-4), (10.0, 4.0, 2e-4)] {
            let q = quadrature_perimeter(a, b);
            assert!(((ramanujan_circumference(a, b) - q) / q).abs() < tol);
        }
    }

    #[test]
    fn recovers_reference_ellipse() {
        let pts = sample(50.0, 40.0, 20.0, 10.0, 30f64.to_radians(), 40, 0.0, 2.0 * PI);
        let p = fit_conic(&pts).unwrap();
        let rel = |x: f64, y: f64| ((x - y) / y).abs();
        assert!(rel(p.cx, 50.0) < 1e-3 && rel(p.cy, 40.0) < 1e-3);
        assert!(rel(p.a, 20.0) < 1e-3 && rel(p.b, 10.0) < 1e-3);
        assert!(rel(p.angle, 30f64.to_radians()) < 1e-3);
    }

    #[test]
    fn circle_has_unit_aspect() {
        let pts = sample(12.0, -3.0, 7.0, 7.0, 0.0, 30, 0.0, 2.0 * PI);
        let p = fit_conic(&pts).unwrap();
        assert!((p.aspect_ratio - 1.0).abs() < 1e-6);
        assert!((p.circumference - 2.0 * PI * 7.0).abs() < 1e-5);
    }

    #[test]
    fn collinear_points_fail() {
        let pts: Vec<Vec2> = (0..5).map(|i| Vec2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(fit_conic(&pts).is_err());
        assert_eq!(fit_conic(&pts[..4]), Err(FitError::TooFewPoints));
    }

    #[test]
    fn translation_consistent() {
        let pts = sample(30.0, 20.0, 15.0, 9.0, 1.0, 25, 0.3, 4.0);
        let p = fit_conic(&pts).unwrap();
        let moved: Vec<Vec2> = pts.iter().map(|q| *q + Vec2::new(113.0, -41.5)).collect();
        let m = fit_conic(&moved).unwrap();
        assert!((m.cx - p.cx - 113.0).abs() < 1e-6 && (m.cy - p.cy + 41.5).abs() < 1e-6);
    }

    #[test]
    fn ceiling_examples() {
        let f = FitFilters::default();
        assert_eq!(f.circumference_ceiling(1.0), 290.0);
        assert!((f.circumference_ceiling(0.5) - 213.0).abs() < 1e-12);
        let rel = (0.64 - f.error_intercept) / 200.0;
        assert!((rel - 0.006).abs() < 1e-12);
        assert!(rel <= f.error_threshold);
    }

    fn ctx() -> FitContext {
        FitContext {
            circumference: 150.0,
            aspect_ratio: 0.8,
            width: 50.0,
            height: 40.0,
            angle: 0.0,
            delta_c: 0.2,
            delta_ar: 0.2,
            appearance_certainty: 1.0,
        }
    }

    #[test]
    fn filters_reject_each_bound() {
        let f = FitFilters::default();
        let c = ctx();
        let good = EllipseParams::from_axes(0.0, 0.0, 26.0, 20.8, 0.0);
        assert!((good.circumference - 147.4).abs() < 1.0);
        assert_eq!(apply_filters(&good, 140.0, 0.01, &c, &f), None);
        let tiny = EllipseParams::from_axes(0.0, 0.0, 9.0, 8.0, 0.0);
        assert_eq!(apply_filters(&tiny, 140.0, 0.01, &c, &f), Some(RejectReason::CircumferenceRange));
        let flat = EllipseParams::from_axes(0.0, 0.0, 30.0, 11.0, 0.0);
        assert_eq!(apply_filters(&flat, 140.0, 0.01, &c, &f), Some(RejectReason::AspectRatio));
        // AR 0.5 at C ~ 230 violates the ceiling (213) but not the absolute range.
        let big = EllipseParams::from_axes(0.0, 0.0, 47.5, 23.75, 0.0);
        assert!(big.circumference > 213.0 && big.circumference < 290.0);
        assert_eq!(apply_filters(&big, 140.0, 0.01, &c, &f), Some(RejectReason::CircumferenceCeiling));
        let grown = EllipseParams::from_axes(0.0, 0.0, 36.0, 28.8, 0.0);
        assert_eq!(apply_filters(&grown, 140.0, 0.01, &c, &f), Some(RejectReason::CircumferenceChange));
        let round = EllipseParams::from_axes(0.0, 0.0, 23.6, 23.5, 0.0);
        let mut c2 = c;
        c2.aspect_ratio = 0.7;
        c2.delta_ar = 0.1;
        assert_eq!(apply_filters(&round, 140.0, 0.01, &c2, &f), Some(RejectReason::AspectChange));
        let floor = 0.3 * 150.0 * 0.8;
        assert_eq!(apply_filters(&good, floor - 0.01, 0.01, &c, &f), Some(RejectReason::EdgeLength));
        assert_eq!(apply_filters(&good, floor + 0.01, 0.01, &c, &f), None);
        assert_eq!(apply_filters(&good, 140.0, 0.6001, &c, &f), Some(RejectReason::FitError));
        assert_eq!(apply_filters(&good, 140.0, 0.6, &c, &f), None);
    }

    #[test]
    fn fifteen_subsets_for_four_edges() {
        assert_eq!(edge_subsets(4).len(), 15);
        assert_eq!(edge_subsets(1), vec![vec![0]]);
    }

    #[test]
    fn keep_nearest_matches_sort_oracle() {
        let lengths = [10.0, 160.0, 140.0, 149.0, 300.0, 151.0, 90.0, 155.0];
        let mut cands: Vec<FitCandidate> = lengths
            .iter()
            .map(|&l| FitCandidate {
                members: vec![],
                length: l,
                points: vec![],
                params: None,
                error_abs: 0.0,
                error_rel: 0.0,
                score: 0.0,
                reject: None,
            })
            .collect();
        keep_nearest(&mut cands, 150.0, 6);
        let mut sorted = lengths.to_vec();
        sorted.sort_by(|a, b| (a - 150.0f64).abs().partial_cmp(&(b - 150.0f64).abs()).unwrap());
        let mut expect: Vec<f64> = sorted[..6].to_vec();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut got: Vec<f64> = cands.iter().map(|c| c.length).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, expect);
    }

    #[test]
    fn selection_averages_within_margin() {
        let mk = |score: f64, cx: f64| FitCandidate {
            members: vec![],
            length: 150.0,
            points: vec![],
            params: Some(EllipseParams::from_axes(cx, 0.0, 25.0, 20.0, 0.1)),
            error_abs: 0.0,
            error_rel: 0.0,
            score,
            reject: None,
        };
        let cands = [mk(0.80, 10.0), mk(0.75, 20.0), mk(0.60, 30.0)];
        let scores: Vec<f64> = cands.iter().map(|c| c.score).collect();
        let top = scores.iter().cloned().fold(f64::MIN, f64::max);
        let kept: Vec<usize> = (0..3).filter(|&i| scores[i] >= top - 0.10).collect();
        assert_eq!(kept, vec![0, 1]);
        let avg = average_fits(&[cands[0].params.unwrap(), cands[1].params.unwrap()]);
        assert!((avg.cx - 15.0).abs() < 1e-12);
    }

    #[test]
    fn circular_mean_of_orientations() {
        let a = EllipseParams::from_axes(0.0, 0.0, 20.0, 10.0, 0.05);
        let b = EllipseParams::from_axes(0.0, 0.0, 20.0, 10.0, PI - 0.05);
        let m = average_fits(&[a, b]);
        assert!(axis_angle_diff(m.angle, 0.0).abs() < 1e-9);
    }

    #[test]
    fn angle_weight_fades_for_circles() {
        let w = FitWeights::default();
        assert!(((1.0 - w.rho * 1.0) - 0.3).abs() < 1e-12);
        let c = ctx();
        let s = FitSigmas::default();
        let round = EllipseParams::from_axes(0.0, 0.0, 24.0, 24.0, 1.2);
        let full = fit_score(&round, 150.0, 0.0, &FitContext { aspect_ratio: 1.0, ..c }, &w, &s);
        assert!(full > 0.0 && full <= 1.0);
    }
}
