//! Search-area sizing, corneal reflection detection and the approximate
//! position scan with a vertical three-band Haar-like feature.

use serde::{Deserialize, Serialize};

use crate::estimator::{EstimatorParams, PupilState};
use crate::geom::Vec2;
use crate::raster::{downsample, GrayImage, IntegralImage, Rect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocateParams {
    /// Side of the reflection kernel and of the square masked from the Haar centre band.
    pub glint_kernel: usize,
    /// Only pixels at least this bright are considered as reflection centres.
    pub glint_floor: u8,
    pub haar_w1: f64,
    pub haar_w2: f64,
    /// The Haar scan runs only while the position certainty is below this value.
    pub haar_max_certainty: f64,
    /// Search areas larger than this many pixels are scanned on a 2× downsampled copy.
    pub haar_downsample_area: usize,
    /// Scan stride on the downsampled copy.
    pub haar_stride: usize,
}

impl Default for LocateParams {
    fn default() -> Self {
        Self {
            glint_kernel: 11,
            glint_floor: 200,
            haar_w1: 3.3,
            haar_w2: 1.0,
            haar_max_certainty: 0.75,
            haar_downsample_area: 120 * 120,
            haar_stride: 2,
        }
    }
}

impl LocateParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.glint_kernel < 3 || self.glint_kernel % 2 == 0 {
            return Err(format!("locate.glint_kernel must be odd and >= 3, got {}", self.glint_kernel));
        }
        if self.haar_stride == 0 {
            return Err("locate.haar_stride must be >= 1".into());
        }
        Ok(())
    }
}

/// Search-area geometry for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoiParams {
    pub delta_l: f64,
    pub delta_s: f64,
    pub delta_c: f64,
    pub delta_ar: f64,
    pub delta_max_s: f64,
    pub delta_max_c: f64,
    pub width: f64,
    pub height: f64,
    pub aoi: Rect,
}

impl AoiParams {
    /// Same size, re-centred on `(cx, cy)` and clamped to the frame.
    pub fn recentred(&self, cx: f64, cy: f64, img_w: usize, img_h: usize) -> Rect {
        Rect::centred(cx, cy, self.width, self.height, img_w, img_h)
    }
}

/// Threshold interpolated between the upper threshold (full certainty) and the maximum (no certainty).
pub fn mix_threshold(certainty: f64, upper: f64, max: f64) -> f64 {
    (1.0 - certainty) * (max - upper) + upper
}

pub fn compute_aoi(
    state: &PupilState,
    img_w: usize,
    img_h: usize,
    est: &EstimatorParams,
    c_min: f64,
    c_max: f64,
) -> AoiParams {
    let (cs, ca) = (state.position_certainty, state.appearance_certainty);
    let c_hat = state.circumference.prediction;
    let (w_hat, h_hat) = (state.width.prediction, state.height.prediction);

    let delta_max_s = (img_w as f64 - w_hat).max(img_h as f64 - h_hat).max(est.upper.position);
    let delta_max_c = ((c_max - c_hat) / c_max).max((c_hat - c_min) / c_hat).max(est.upper.circumference);
    let delta_s = mix_threshold(cs, est.upper.position, delta_max_s);
    let delta_c = mix_threshold(ca, est.upper.circumference, delta_max_c);
    let delta_ar = mix_threshold(ca, est.upper.aspect_ratio, 1.0);
    let delta_l = c_hat * delta_c / std::f64::consts::PI + 2.0 * delta_s;
    let width = delta_l + w_hat;
    let height = delta_l + h_hat;
    let (x, y) = state.position();
    AoiParams {
        delta_l,
        delta_s,
        delta_c,
        delta_ar,
        delta_max_s,
        delta_max_c,
        width,
        height,
        aoi: Rect::centred(x, y, width, height, img_w, img_h),
    }
}

/// Corneal reflection candidate, in the coordinates of the image it was found in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Glint {
    pub position: Vec2,
    pub kernel: usize,
    pub present: bool,
}

impl Glint {
    pub fn absent(kernel: usize) -> Self {
        Self { position: Vec2::ZERO, kernel, present: false }
    }

    /// Square of side `kernel` centred on the reflection, clamped to `w`×`h`.
    pub fn square(&self, w: usize, h: usize) -> Rect {
        if !self.present {
            return Rect::default();
        }
        let k = self.kernel as f64;
        let half = (k - 1.0) / 2.0;
        let x0 = (self.position.x - half).round();
        let y0 = (self.position.y - half).round();
        let x1 = (x0 + k).clamp(0.0, w as f64) as usize;
        let y1 = (y0 + k).clamp(0.0, h as f64) as usize;
        let (x0, y0) = (x0.clamp(0.0, w as f64) as usize, y0.clamp(0.0, h as f64) as usize);
        Rect::new(x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
    }
}

fn glint_response(img: &GrayImage, x: usize, y: usize, half: usize) -> i32 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let at = |dx: i64, dy: i64| {
        let xx = (x as i64 + dx).clamp(0, w - 1) as usize;
        let yy = (y as i64 + dy).clamp(0, h - 1) as usize;
        img.get(xx, yy) as i32
    };
    let r = half as i64;
    at(0, 0) - at(-r, -r) - at(r, -r) - at(-r, r) - at(r, r)
}

/// Convolves bright pixels with a kernel that is +1 at its centre and −1 at
/// its four corners. The first maximum in row-major order wins; the reported
/// position is the centroid of the maximal pixels inside the kernel window
/// around it, so a saturated plateau resolves to its centre.
pub fn detect_glint(img: &GrayImage, kernel: usize, floor: u8) -> Glint {
    let half = kernel / 2;
    let mut best: Option<(i32, usize, usize)> = None;
    let mut responses = vec![i32::MIN; img.width() * img.height()];
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y) < floor {
                continue;
            }
            let r = glint_response(img, x, y, half);
            responses[y * img.width() + x] = r;
            if best.is_none_or(|(b, _, _)| r > b) {
                best = Some((r, x, y));
            }
        }
    }
    let Some((top, bx, by)) = best else {
        return Glint::absent(kernel);
    };
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    let x0 = bx.saturating_sub(half);
    let x1 = (bx + half).min(img.width() - 1);
    let y1 = (by + 2 * half).min(img.height() - 1);
    for y in by..=y1 {
        for x in x0..=x1 {
            if responses[y * img.width() + x] == top {
                sx += x as f64;
                sy += y as f64;
                n += 1.0;
            }
        }
    }
    Glint { position: Vec2::new(sx / n, sy / n), kernel, present: true }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HaarResponse {
    pub score: f64,
    /// Centre of the middle band.
    pub position: Vec2,
    pub mean_left: f64,
    pub mean_centre: f64,
    pub mean_right: f64,
}

/// Response of a dark centre band relative to its flanks; larger is more pupil-like.
pub fn haar_feature_response(mean_left: f64, mean_centre: f64, mean_right: f64, w1: f64, w2: f64) -> f64 {
    -w1 * mean_centre + w2 * ((mean_left + mean_right) / 2.0 - mean_centre)
}

/// Scans every placement of a `3w`×`h` feature whose centre band lies inside
/// the image, stepping by `stride`. Flank bands are clipped to the image; a
/// fully clipped flank is replaced by the other one. Pixels under the glint
/// square are removed from the centre band. Returns `None` when no placement fits.
pub fn haar_scan(
    ii: &IntegralImage,
    w: usize,
    h: usize,
    glint: &Glint,
    w1: f64,
    w2: f64,
    stride: usize,
) -> Option<HaarResponse> {
    let (iw, ih) = (ii.width(), ii.height());
    let (w, h) = (w.clamp(1, iw), h.clamp(1, ih));
    let stride = stride.max(1);
    let gsq = glint.square(iw, ih);
    let mut best: Option<HaarResponse> = None;
    let mut y = 0;
    while y + h <= ih {
        let mut x = 0;
        while x + w <= iw {
            let centre = Rect::new(x, y, w, h);
            let mut sum_c = ii.rect_sum(centre) as f64;
            let mut area_c = centre.area() as f64;
            if glint.present {
                let overlap = centre.intersect(&gsq);
                if overlap.area() > 0 {
                    sum_c -= ii.rect_sum(overlap) as f64;
                    area_c -= overlap.area() as f64;
                }
            }
            if area_c > 0.0 {
                let left = Rect::new(x.saturating_sub(w), y, x.min(w), h);
                let right = Rect::new(x + w, y, w, h).clamped(iw, ih);
                let mean = |r: Rect| (r.area() > 0).then(|| ii.rect_sum(r) as f64 / r.area() as f64);
                let mean_c = sum_c / area_c;
                let (ml, mr) = match (mean(left), mean(right)) {
                    (Some(l), Some(r)) => (l, r),
                    (Some(l), None) => (l, l),
                    (None, Some(r)) => (r, r),
                    (None, None) => (mean_c, mean_c),
                };
                let score = haar_feature_response(ml, mean_c, mr, w1, w2);
                if best.is_none_or(|b| score > b.score) {
                    best = Some(HaarResponse {
                        score,
                        position: Vec2::new(x as f64 + (w as f64 - 1.0) / 2.0, y as f64 + (h as f64 - 1.0) / 2.0),
                        mean_left: ml,
                        mean_centre: mean_c,
                        mean_right: mr,
                    });
                }
            }
            x += stride;
        }
        y += stride;
    }
    best
}

/// Approximate pupil position in `img` coordinates for predicted size `w_hat`×`h_hat`.
/// Large images are reduced by a factor of two and scanned with `params.haar_stride`.
pub fn approximate_position(img: &GrayImage, w_hat: f64, h_hat: f64, glint: &Glint, params: &LocateParams) -> Option<HaarResponse> {
    let w = w_hat.round().max(1.0) as usize;
    let h = h_hat.round().max(1.0) as usize;
    if img.width() * img.height() > params.haar_downsample_area {
        let small = downsample(img, 2);
        let ii = IntegralImage::build(&small);
        let g = Glint {
            position: Vec2::new((glint.position.x - 0.5) / 2.0, (glint.position.y - 0.5) / 2.0),
            kernel: (glint.kernel / 2) | 1,
            present: glint.present,
        };
        let r = haar_scan(&ii, (w / 2).max(1), (h / 2).max(1), &g, params.haar_w1, params.haar_w2, params.haar_stride)?;
        Some(HaarResponse { position: Vec2::new(r.position.x * 2.0 + 0.5, r.position.y * 2.0 + 0.5), ..r })
    } else {
        let ii = IntegralImage::build(img);
        haar_scan(&ii, w, h, glint, params.haar_w1, params.haar_w2, 1)
    }
}

/// Mixes the detector position with the prediction according to position certainty.
pub fn blend_position(detected: Vec2, predicted: Vec2, c_s: f64) -> Vec2 {
    detected + (predicted - detected) * c_s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::draw::{fill_ellipse, EllipseShape};
    use crate::estimator::EstimatorParams;
    use proptest::prelude::*;

    fn state_with(cs_raw: f64, ca_raw: f64) -> PupilState {
        let p = EstimatorParams::default();
        let mut s = PupilState::initial(&p, (200.0, 100.0), 2.5);
        s.raw_position_certainty = cs_raw;
        s.raw_appearance_certainty = ca_raw;
        s
    }

    #[test]
    fn aoi_full_certainty_limits() {
        let p = EstimatorParams::default();
        let mut s = state_with(1.0, 1.0);
        s.position_certainty = 1.0;
        s.appearance_certainty = 1.0;
        let a = compute_aoi(&s, 400, 200, &p, 60.0, 290.0);
        assert_eq!(a.delta_s, 6.0);
        assert_eq!(a.delta_c, 0.12);
        let expected = 150.0 * 0.12 / std::f64::consts::PI + 12.0;
        assert!((a.delta_l - expected).abs() < 1e-12);
        assert!((a.delta_l - 17.7296).abs() < 1e-3);
        assert!(a.width >= s.width.prediction && a.height >= s.height.prediction);
    }

    #[test]
    fn aoi_zero_certainty_limits() {
        let p = EstimatorParams::default();
        let mut s = state_with(0.0, 0.0);
        s.position_certainty = 0.0;
        s.appearance_certainty = 0.0;
        let a = compute_aoi(&s, 400, 200, &p, 60.0, 290.0);
        assert_eq!(a.delta_s, a.delta_max_s);
        assert_eq!(a.delta_c, a.delta_max_c);
        assert_eq!(a.delta_ar, 1.0);
        assert!((a.delta_max_c - 0.6).abs() < 1e-12);
        assert!(a.aoi.fits_in(400, 200));
    }

    #[test]
    fn aoi_shrinks_with_certainty() {
        let p = EstimatorParams::default();
        let mut prev = f64::INFINITY;
        for i in 0..=20 {
            let c = i as f64 / 20.0;
            let mut s = state_with(0.0, 0.0);
            s.position_certainty = c;
            s.appearance_certainty = c;
            let a = compute_aoi(&s, 400, 200, &p, 60.0, 290.0);
            assert!(a.width <= prev);
            prev = a.width;
        }
    }

    #[test]
    fn haar_examples() {
        let f = haar_feature_response(200.0, 50.0, 200.0, 3.3, 1.0);
        assert!((f + 15.0).abs() < 1e-9);
        let lash = haar_feature_response(60.0, 50.0, 60.0, 3.3, 1.0);
        assert!((lash + 155.0).abs() < 1e-9);
        assert!(lash < f);
    }

    #[test]
    fn blend_examples() {
        let p = Vec2::new(10.0, 0.0);
        let d = Vec2::new(20.0, 0.0);
        assert_eq!(blend_position(d, p, 1.0), p);
        assert_eq!(blend_position(d, p, 0.0), d);
        assert_eq!(blend_position(d, p, 0.5), Vec2::new(15.0, 0.0));
    }

    #[test]
    fn no_bright_pixels_no_glint() {
        let img = GrayImage::filled(30, 30, 199);
        assert!(!detect_glint(&img, 11, 200).present);
    }

    /// Direct evaluation of the corner kernel at every bright pixel.
    fn brute_glint(img: &GrayImage, kernel: usize) -> Vec<(i32, usize, usize)> {
        let mut out = Vec::new();
        for y in 0..img.height() {
            for x in 0..img.width() {
                if img.get(x, y) >= 200 {
                    let h = (kernel / 2) as i32;
                    let px = |dx: i32, dy: i32| {
                        let xx = (x as i32 + dx).clamp(0, img.width() as i32 - 1) as usize;
                        let yy = (y as i32 + dy).clamp(0, img.height() as i32 - 1) as usize;
                        img.get(xx, yy) as i32
                    };
                    let r = px(0, 0) - px(-h, -h) - px(h, -h) - px(-h, h) - px(h, h);
                    out.push((r, x, y));
                }
            }
        }
        out
    }

    #[test]
    fn saturated_disk_found_at_centre() {
        let mut img = GrayImage::filled(40, 40, 30);
        for y in 15..20 {
            for x in 20..25 {
                if !((y == 15 || y == 19) && (x == 20 || x == 24)) {
                    img.set(x, y, 255);
                }
            }
        }
        let g = detect_glint(&img, 7, 200);
        assert!(g.present);
        assert!((g.position.x - 22.0).abs() <= 1.0 && (g.position.y - 17.0).abs() <= 1.0, "{:?}", g.position);
        let max = brute_glint(&img, 7).iter().map(|r| r.0).max().unwrap();
        let r = glint_response(&img, g.position.x.round() as usize, g.position.y.round() as usize, 3);
        assert_eq!(r, max);
    }

    #[test]
    fn two_disks_first_wins() {
        let mut img = GrayImage::filled(60, 30, 30);
        for (cx, cy) in [(40usize, 8usize), (12, 20)] {
            for y in cy - 1..=cy + 1 {
                for x in cx - 1..=cx + 1 {
                    img.set(x, y, 255);
                }
            }
        }
        let g = detect_glint(&img, 7, 200);
        assert!((g.position.x - 40.0).abs() <= 1.0 && (g.position.y - 8.0).abs() <= 1.0);
    }

    #[test]
    fn uniform_image_first_placement() {
        let img = GrayImage::filled(30, 20, 100);
        let ii = IntegralImage::build(&img);
        let r = haar_scan(&ii, 5, 4, &Glint::absent(11), 3.3, 1.0, 1).unwrap();
        assert_eq!(r.position, Vec2::new(2.0, 1.5));
    }

    #[test]
    fn feature_size_invariant_on_uniform_regions() {
        let img = GrayImage::filled(60, 40, 90);
        let ii = IntegralImage::build(&img);
        let a = haar_scan(&ii, 4, 4, &Glint::absent(11), 3.3, 1.0, 1).unwrap();
        let b = haar_scan(&ii, 12, 9, &Glint::absent(11), 3.3, 1.0, 1).unwrap();
        assert!((a.score - b.score).abs() < 1e-9);
    }

    #[test]
    fn glint_correction_darkens_centre() {
        let mut img = GrayImage::filled(60, 30, 150);
        fill_ellipse(&mut img, &EllipseShape { cx: 30.0, cy: 15.0, a: 8.0, b: 8.0, angle: 0.0 }, 30, 4);
        for y in 13..18 {
            for x in 28..33 {
                img.set(x, y, 255);
            }
        }
        let ii = IntegralImage::build(&img);
        let glint = detect_glint(&img, 7, 200);
        assert!(glint.present);
        let plain = haar_scan(&ii, 16, 16, &Glint::absent(7), 3.3, 1.0, 1).unwrap();
        let masked = haar_scan(&ii, 16, 16, &glint, 3.3, 1.0, 1).unwrap();
        assert!(masked.mean_centre <= plain.mean_centre);
        assert!((masked.position.x - 30.0).abs() <= 2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn scan_lands_inside_pupil(cx in 40.0f64..360.0, cy in 35.0f64..165.0, r in 14.0f64..30.0, ar in 0.6f64..1.0) {
            let mut img = GrayImage::filled(400, 200, 140);
            let shape = EllipseShape { cx, cy, a: r, b: r * ar, angle: 0.0 };
            fill_ellipse(&mut img, &shape, 35, 2);
            let found = approximate_position(&img, 2.0 * r, 2.0 * r * ar, &Glint::absent(11), &LocateParams::default()).unwrap();
            prop_assert!((found.position.x - cx).abs() <= r);
            prop_assert!((found.position.y - cy).abs() <= r * ar);
        }
    }
}
