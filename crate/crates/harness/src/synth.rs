//! Synthetic eye sequences with exact ground truth.
//!
//! A dark anti-aliased ellipse on an iris-toned background follows a chain of
//! fixations and minimum-jerk saccades. An optional eyelid cap covers the top
//! of the pupil and an optional bright disk stands in for the corneal
//! reflection. Labels always describe the full, unoccluded ellipse.

use pupiltrack::draw::{fill_ellipse, EllipseShape};
use pupiltrack::ellipse::EllipseParams;
use pupiltrack::raster::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::LabelRecord;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("synthetic spec out of bounds: {0}")]
    OutOfBounds(String),
    #[error("parsing synthetic spec: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaccadeSpec {
    /// Saccade amplitude range in pixels.
    pub amplitude: [f64; 2],
    /// Frames spent fixating between saccades.
    pub fixation_frames: [usize; 2],
    /// Saccade duration is `base_frames + frames_per_px · amplitude`, rounded.
    pub base_frames: f64,
    pub frames_per_px: f64,
    /// Gaussian fixation jitter per frame, pixels.
    pub drift_sigma: f64,
}

impl Default for SaccadeSpec {
    fn default() -> Self {
        Self {
            amplitude: [20.0, 80.0],
            fixation_frames: [20, 60],
            base_frames: 6.0,
            frames_per_px: 0.15,
            drift_sigma: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EyelidSpec {
    pub enabled: bool,
    /// Largest fraction of the pupil height covered from the top.
    pub max_coverage: f64,
    pub intensity: u8,
    /// Frames per full cover/uncover cycle.
    pub period_frames: f64,
}

impl Default for EyelidSpec {
    fn default() -> Self {
        Self { enabled: true, max_coverage: 0.4, intensity: 185, period_frames: 150.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlintSpec {
    pub enabled: bool,
    pub radius: f64,
    pub intensity: u8,
    /// Largest offset from the pupil centre as a fraction of the minor
    /// semi-axis; one offset is drawn per trial.
    pub max_offset: f64,
    /// Fraction of the pupil displacement from its start the reflection follows.
    pub follow: f64,
}

impl Default for GlintSpec {
    fn default() -> Self {
        Self { enabled: true, radius: 3.5, intensity: 250, max_offset: 1.0, follow: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub frames: usize,
    pub background: u8,
    pub pupil_intensity: u8,
    pub noise_sigma: f64,
    /// Circumference range in pixels; one value is drawn per trial.
    pub circumference: [f64; 2],
    pub aspect_ratio: [f64; 2],
    pub angle_deg: [f64; 2],
    /// Relative amplitude of the slow circumference oscillation.
    pub size_variation: f64,
    pub size_period_frames: f64,
    /// Closest the pupil centre may come to the frame border, pixels.
    pub margin: f64,
    /// Anti-aliasing sub-samples per axis.
    pub samples: usize,
    pub saccades: SaccadeSpec,
    pub eyelid: EyelidSpec,
    pub glint: GlintSpec,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 400,
            height: 200,
            fps: 250.0,
            frames: 300,
            background: 125,
            pupil_intensity: 35,
            noise_sigma: 3.0,
            circumference: [110.0, 200.0],
            aspect_ratio: [0.7, 1.0],
            angle_deg: [0.0, 180.0],
            size_variation: 0.04,
            size_period_frames: 240.0,
            margin: 45.0,
            samples: 4,
            saccades: SaccadeSpec::default(),
            eyelid: EyelidSpec::default(),
            glint: GlintSpec::default(),
        }
    }
}

fn ordered(name: &str, r: [f64; 2]) -> Result<(), SynthError> {
    if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
        Ok(())
    } else {
        Err(SynthError::OutOfBounds(format!("{name} range {r:?} is not ordered")))
    }
}

impl SynthSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        let spec: SynthSpec = toml::from_str(text).map_err(|e| SynthError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// A small sequence with no motion, occlusion, reflection or noise.
    pub fn static_circle(circumference: f64, frames: usize) -> Self {
        Self {
            frames,
            noise_sigma: 0.0,
            circumference: [circumference; 2],
            aspect_ratio: [1.0; 2],
            angle_deg: [0.0; 2],
            size_variation: 0.0,
            saccades: SaccadeSpec { fixation_frames: [frames.max(1); 2], drift_sigma: 0.0, ..SaccadeSpec::default() },
            eyelid: EyelidSpec { enabled: false, ..EyelidSpec::default() },
            glint: GlintSpec { enabled: false, ..GlintSpec::default() },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let oob = |m: String| Err(SynthError::OutOfBounds(m));
        ordered("circumference", self.circumference)?;
        ordered("aspect_ratio", self.aspect_ratio)?;
        ordered("angle_deg", self.angle_deg)?;
        ordered("saccades.amplitude", self.saccades.amplitude)?;
        let c_lo = self.circumference[0] * (1.0 - self.size_variation);
        let c_hi = self.circumference[1] * (1.0 + self.size_variation);
        if c_lo < 60.0 || c_hi > 290.0 {
            return oob(format!("circumference must stay within [60, 290], spans [{c_lo}, {c_hi}]"));
        }
        if self.aspect_ratio[0] < 0.4 || self.aspect_ratio[1] > 1.0 {
            return oob(format!("aspect ratio must lie in [0.4, 1], got {:?}", self.aspect_ratio));
        }
        if self.width == 0 || self.height == 0 || self.frames == 0 || !(self.fps > 0.0) {
            return oob("width, height, frames and fps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.size_variation) || self.noise_sigma < 0.0 || self.saccades.drift_sigma < 0.0 {
            return oob("size_variation must lie in [0, 1); noise and drift must be non-negative".into());
        }
        if self.saccades.fixation_frames[0] == 0 || self.saccades.fixation_frames[0] > self.saccades.fixation_frames[1] {
            return oob("saccades.fixation_frames must be a positive ordered range".into());
        }
        if !(0.0..=1.0).contains(&self.eyelid.max_coverage) {
            return oob("eyelid.max_coverage must lie in [0, 1]".into());
        }
        if 2.0 * self.margin >= self.width.min(self.height) as f64 {
            return oob("margin leaves no room for the pupil".into());
        }
        Ok(())
    }
}

/// Minimum-jerk position profile at normalized time `tau` ∈ [0, 1].
pub fn min_jerk(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

/// Pupil centre per frame: fixations with small drift joined by saccades.
pub fn trajectory(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let s = &spec.saccades;
    let (x0, x1) = (spec.margin, spec.width as f64 - spec.margin);
    let (y0, y1) = (spec.margin, spec.height as f64 - spec.margin);
    let drift = Normal::new(0.0, s.drift_sigma.max(1e-12)).expect("finite sigma");
    let mut pos = (spec.width as f64 / 2.0, spec.height as f64 / 2.0);
    let mut out = Vec::with_capacity(spec.frames);
    while out.len() < spec.frames {
        let fix = rng.random_range(s.fixation_frames[0]..=s.fixation_frames[1]);
        for _ in 0..fix {
            if s.drift_sigma > 0.0 {
                pos.0 = (pos.0 + drift.sample(rng)).clamp(x0, x1);
                pos.1 = (pos.1 + drift.sample(rng)).clamp(y0, y1);
            }
            out.push(pos);
        }
        let amp = rng.random_range(s.amplitude[0]..=s.amplitude[1]);
        let mut target = pos;
        for _ in 0..32 {
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            let t = (pos.0 + amp * dir.cos(), pos.1 + amp * dir.sin());
            target = (t.0.clamp(x0, x1), t.1.clamp(y0, y1));
            if (t.0 - target.0).abs() < 1e-9 && (t.1 - target.1).abs() < 1e-9 {
                break;
            }
        }
        let dist = ((target.0 - pos.0).powi(2) + (target.1 - pos.1).powi(2)).sqrt();
        let duration = (s.base_frames + s.frames_per_px * dist).round().max(1.0) as usize;
        for k in 1..=duration {
            let f = min_jerk(k as f64 / duration as f64);
            out.push((pos.0 + (target.0 - pos.0) * f, pos.1 + (target.1 - pos.1) * f));
        }
        pos = target;
    }
    out.truncate(spec.frames);
    out
}

/// One rendered trial.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub frames: Vec<GrayImage>,
    pub labels: Vec<LabelRecord>,
    /// Fraction of the pupil height covered by the eyelid, per frame.
    pub coverage: Vec<f64>,
    /// Reflection centre per frame, when enabled.
    pub glints: Vec<Option<(f64, f64)>>,
}

/// Renders a deterministic sequence for `seed`.
pub fn synthesize_sequence(spec: &SynthSpec, seed: u64) -> Result<Sequence, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.random_range(r[0]..=r[1]) };
    let c0 = pick(&mut rng, spec.circumference);
    let ar = pick(&mut rng, spec.aspect_ratio);
    let angle = pick(&mut rng, spec.angle_deg).to_radians();
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let lid_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let glint_dir = rng.random_range(0.0..std::f64::consts::TAU);
    let glint_mag = rng.random_range(0.0..=spec.glint.max_offset.max(0.0));
    let path = trajectory(spec, &mut rng);
    let noise = Normal::new(0.0, spec.noise_sigma.max(1e-12)).expect("finite sigma");
    let start = path[0];

    let mut seq = Sequence { frames: Vec::new(), labels: Vec::new(), coverage: Vec::new(), glints: Vec::new() };
    for (n, &(cx, cy)) in path.iter().enumerate() {
        let osc = (std::f64::consts::TAU * n as f64 / spec.size_period_frames.max(1.0) + phase).sin();
        let c = c0 * (1.0 + spec.size_variation * osc);
        let (a, b) = semi_axes(c, ar);
        let shape = EllipseShape { cx, cy, a, b, angle };
        let mut img = GrayImage::filled(spec.width, spec.height, spec.background);
        fill_ellipse(&mut img, &shape, spec.pupil_intensity, spec.samples);

        let glint = spec.glint.enabled.then(|| {
            let lag = 1.0 - spec.glint.follow;
            let off = glint_mag * b;
            (
                cx + off * glint_dir.cos() + lag * (start.0 - cx),
                cy + off * glint_dir.sin() + lag * (start.1 - cy),
            )
        });
        if let Some((gx, gy)) = glint {
            let r = spec.glint.radius;
            fill_ellipse(&mut img, &EllipseShape { cx: gx, cy: gy, a: r, b: r, angle: 0.0 }, spec.glint.intensity, spec.samples);
        }

        let coverage = if spec.eyelid.enabled {
            let t = std::f64::consts::TAU * n as f64 / spec.eyelid.period_frames.max(1.0) + lid_phase;
            spec.eyelid.max_coverage * 0.5 * (1.0 - t.cos())
        } else {
            0.0
        };
        if coverage > 0.0 {
            let half_h = shape.half_extents().1;
            let edge = cy - half_h + 2.0 * half_h * coverage;
            pupiltrack::draw::fill_above(&mut img, edge, spec.eyelid.intensity);
        }

        if spec.noise_sigma > 0.0 {
            for v in img.data_mut() {
                *v = (*v as f64 + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
            }
        }

        let e = EllipseParams::from_axes(cx, cy, a, b, angle);
        seq.labels.push(LabelRecord { frame: n, cx, cy, a: e.a, b: e.b, angle: e.angle.to_degrees() });
        seq.frames.push(img);
        seq.coverage.push(coverage);
        seq.glints.push(glint);
    }
    Ok(seq)
}

/// Semi-axes of the ellipse with Ramanujan circumference `c` and aspect ratio `ar`.
pub fn semi_axes(c: f64, ar: f64) -> (f64, f64) {
    let unit = pupiltrack::ellipse::ramanujan_circumference(1.0, ar);
    (c / unit, ar * c / unit)
}
