//! Per-frame orchestration: search area, approximate position, edges,
//! segmentation, classification, ellipse fitting and the estimator update.
//!
//! A [`Pipeline`] holds the scaled configuration and loaded calibration
//! tables for one input geometry. It is immutable while processing; the
//! per-trial [`PupilState`] is threaded through [`Pipeline::process_frame`].

use std::time::{Duration, Instant};

use rustc_hash::FxHashSet as HashSet;
use serde::{Deserialize, Serialize};

use crate::classify::{
    classify_edges, edge_features, edge_score, feature_values, ClassifierCalibration, EdgeFeatures, EdgePrediction,
    EdgeSigmas, FeatureValues,
};
use crate::config::{Config, ConfigError, SelectionRadius};
use crate::contour::{curvature_limits, curvature_profile, select_edges, Chain, CurvatureModel};
use crate::edgemap::{canny, extract_edges, thin};
use crate::ellipse::{
    enumerate_candidates, fit_candidates, score_and_select, EllipseParams, FitCandidate, FitContext, FitSelection,
    RejectReason,
};
use crate::estimator::{PredictionLimits, PupilMeasurement, PupilState};
use crate::geom::{Pixel, Vec2};
use crate::locate::{approximate_position, blend_position, compute_aoi, detect_glint, AoiParams, Glint, HaarResponse};
use crate::raster::{GrayImage, Rect};
use crate::segment::{length_segment, path_segment, PathWindow, TailContext};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("reading {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("curvature model: {0}")]
    Model(String),
    #[error("classifier calibration: {0}")]
    Calibration(String),
    #[error("image geometry {0}x{1} @ {2} Hz is not usable")]
    Geometry(usize, usize, f64),
}

/// Microseconds spent in each stage of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub locate: u64,
    pub edges: u64,
    pub segment: u64,
    pub classify: u64,
    pub fit: u64,
    pub update: u64,
    pub total: u64,
}

impl StageTimings {
    pub fn stage_sum(&self) -> u64 {
        self.locate + self.edges + self.segment + self.classify + self.fit + self.update
    }
}

/// Why a frame produced no detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissReason {
    EmptySearchArea,
    NoEdges,
    NoCandidateEdges,
    NoClassifiedEdges,
    NoCombinations,
    AllFitsRejected,
}

/// Counts collected on every frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub edges_found: usize,
    pub edges_selected: usize,
    pub segments: usize,
    pub classified: usize,
    pub candidates: usize,
    /// Reject reason of every candidate that did not survive filtering.
    pub rejects: Vec<RejectReason>,
    pub miss: Option<MissReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame: usize,
    pub detected: bool,
    pub measurement: Option<PupilMeasurement>,
    pub ellipse: Option<EllipseParams>,
    /// Position prediction the edge search was centred on.
    pub search_centre: Vec2,
    /// Certainties after the estimator update.
    pub position_certainty: f64,
    pub appearance_certainty: f64,
    pub timings: StageTimings,
    pub diagnostics: FrameDiagnostics,
}

/// One segmented edge and how the classifier and the fit stage treated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTrace {
    /// Index into the extracted edges of the frame.
    pub source: usize,
    /// Image coordinates.
    pub chain: Chain,
    pub features: EdgeFeatures,
    pub values: FeatureValues,
    /// Normalized score at the frame's certainties.
    pub score: f64,
    pub classified: bool,
    /// Member of an accepted ellipse fit.
    pub fit_member: bool,
}

/// Intermediate products of one frame, collected on request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTrace {
    pub aoi: AoiParams,
    /// In search-area coordinates.
    pub glint: Glint,
    /// In image coordinates.
    pub haar: Option<HaarResponse>,
    pub edge_area: Rect,
    pub edge_count: usize,
    /// Selected edges, image coordinates.
    pub selected: Vec<Vec<Pixel>>,
    pub curvature_range: (f64, f64),
    pub segments: Vec<SegmentTrace>,
    pub candidates: Vec<FitCandidate>,
    pub selection: Option<FitSelection>,
}

/// One output line per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub frame: usize,
    pub detected: bool,
    pub cx: f64,
    pub cy: f64,
    pub circumference: f64,
    pub aspect_ratio: f64,
    pub angle_deg: f64,
    pub c_pos: f64,
    pub c_app: f64,
    pub time_us: u64,
}

impl ResultRecord {
    /// Detected frames report the measured ellipse, misses the prediction for the next frame.
    pub fn new(result: &FrameResult, state: &PupilState) -> Self {
        let (cx, cy, c, ar, angle) = match result.ellipse {
            Some(e) => (e.cx, e.cy, e.circumference, e.aspect_ratio, e.angle),
            None => (
                state.x.prediction,
                state.y.prediction,
                state.circumference.prediction,
                state.aspect_ratio.prediction,
                state.angle.prediction,
            ),
        };
        Self {
            frame: result.frame,
            detected: result.detected,
            cx,
            cy,
            circumference: c,
            aspect_ratio: ar,
            angle_deg: angle.to_degrees(),
            c_pos: result.position_certainty,
            c_app: result.appearance_certainty,
            time_us: result.timings.total,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Scaled configuration plus loaded calibration tables for one input geometry.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: Config,
    model: CurvatureModel,
    sigmas: EdgeSigmas,
    width: usize,
    height: usize,
    typical_curvature: f64,
}

fn read(path: &std::path::Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

impl Pipeline {
    /// Scales `cfg` to the input and loads the calibration files it names.
    pub fn new(cfg: &Config, width: usize, height: usize, fps: f64) -> Result<Self, PipelineError> {
        if width == 0 || height == 0 || !(fps > 0.0) {
            return Err(PipelineError::Geometry(width, height, fps));
        }
        cfg.validate()?;
        let mut cfg = cfg.scaled(width, height, fps);
        if let Some(p) = &cfg.pipeline.classifier_calibration {
            let cal = ClassifierCalibration::parse(&read(p)?).map_err(PipelineError::Calibration)?;
            cfg.apply_classifier_calibration(&cal);
        }
        let model = match &cfg.pipeline.curvature_model {
            Some(p) => CurvatureModel::parse(&read(p)?).map_err(|e| PipelineError::Model(e.to_string()))?,
            None => CurvatureModel::shipped(),
        };
        Ok(Self::with_model(cfg, model, width, height))
    }

    /// Uses an already scaled configuration and an in-memory curvature model.
    pub fn with_model(cfg: Config, model: CurvatureModel, width: usize, height: usize) -> Self {
        let t = &cfg.estimator.typical;
        let (lo, hi) = model.lookup(t.circumference, t.aspect_ratio, cfg.pipeline.window);
        let sigmas = cfg.effective_edge_sigmas();
        Self { cfg, model, sigmas, width, height, typical_curvature: 0.5 * (lo + hi) }
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Edge score curves in effect, after frame-rate widening.
    pub fn edge_sigmas(&self) -> &EdgeSigmas {
        &self.sigmas
    }

    /// Exploratory state centred in the frame with typical appearance.
    pub fn initial_state(&self) -> PupilState {
        PupilState::initial(
            &self.cfg.estimator,
            (self.width as f64 / 2.0, self.height as f64 / 2.0),
            self.typical_curvature,
        )
    }

    fn limits(&self) -> PredictionLimits {
        let f = &self.cfg.ellipse.filters;
        PredictionLimits { circumference_min: f.circumference_min, circumference_max: f.circumference_max }
    }

    /// Processes one frame. Never fails: anything that empties the candidate
    /// set ends in the estimator's miss update.
    pub fn process_frame(&self, img: &GrayImage, state: &PupilState, frame: usize) -> (FrameResult, PupilState) {
        let (r, s, _) = self.run(img, state, frame, false);
        (r, s)
    }

    /// As [`Pipeline::process_frame`], also returning the intermediate products.
    pub fn process_frame_traced(
        &self,
        img: &GrayImage,
        state: &PupilState,
        frame: usize,
    ) -> (FrameResult, PupilState, FrameTrace) {
        let (r, s, t) = self.run(img, state, frame, true);
        (r, s, t.expect("trace requested"))
    }

    fn run(&self, img: &GrayImage, prev: &PupilState, frame: usize, want_trace: bool) -> (FrameResult, PupilState, Option<FrameTrace>) {
        let start = Instant::now();
        let mut mark = start;
        let mut lap = || {
            let now = Instant::now();
            let d = now.duration_since(mark).as_micros() as u64;
            mark = now;
            d
        };
        let cfg = &self.cfg;
        let nl = cfg.pipeline.window;
        let filters = &cfg.ellipse.filters;
        let (w, h) = (img.width(), img.height());
        let mut state = prev.clone();
        let mut timings = StageTimings::default();
        let mut diag = FrameDiagnostics::default();

        // Search area, reflection and approximate position.
        let aoi = compute_aoi(&state, w, h, &cfg.estimator, filters.circumference_min, filters.circumference_max);
        let crop = img.crop(aoi.aoi);
        let offset = Vec2::new(aoi.aoi.x as f64, aoi.aoi.y as f64);
        let glint = detect_glint(&crop, cfg.locate.glint_kernel, cfg.locate.glint_floor);
        let predicted = Vec2::new(state.x.prediction, state.y.prediction);
        let (cs, ca) = (state.position_certainty, state.appearance_certainty);
        let mut haar = None;
        let mut centre = predicted;
        if cs < cfg.locate.haar_max_certainty && aoi.aoi.area() > 0 {
            if let Some(r) =
                approximate_position(&crop, state.width.prediction, state.height.prediction, &glint, &cfg.locate)
            {
                let r = HaarResponse { position: r.position + offset, ..r };
                centre = blend_position(r.position, predicted, cs);
                haar = Some(r);
            }
        }
        state.set_position(centre.x, centre.y);
        timings.locate = lap();

        // Edges inside the search area re-centred on the new position.
        let area = aoi.recentred(centre.x, centre.y, w, h);
        let area_offset = Pixel::new(area.x as i32, area.y as i32);
        let mut edges = Vec::new();
        let mut selected = Vec::new();
        if area.area() > 0 {
            let map = thin(&canny(&img.crop(area), &cfg.canny));
            edges = extract_edges(&map);
            let origin = centre - Vec2::new(area.x as f64, area.y as f64);
            let radius = match cfg.pipeline.selection_radius {
                SelectionRadius::Margin => aoi.delta_l / 2.0,
                SelectionRadius::PupilAndMargin => {
                    (state.width.prediction.max(state.height.prediction) + aoi.delta_l) / 2.0
                }
            };
            selected = select_edges(&edges, area.w, area.h, origin, radius, nl);
        }
        let shift = |p: &Pixel| Pixel::new(p.x + area_offset.x, p.y + area_offset.y);
        for e in &mut edges {
            e.points.iter_mut().for_each(|p| *p = shift(p));
            e.tagged.iter_mut().for_each(|p| *p = shift(p));
        }
        diag.edges_found = edges.len();
        diag.edges_selected = selected.len();
        timings.edges = lap();

        // Segmentation.
        let c_hat = state.circumference.prediction;
        let ar_hat = state.aspect_ratio.prediction;
        let win = PathWindow {
            c_hat,
            delta_c: aoi.delta_c,
            c_min: filters.circumference_min,
            c_max: filters.circumference_max,
            window: nl,
        };
        let krange = curvature_limits(
            &self.model,
            c_hat,
            ar_hat,
            aoi.delta_c,
            aoi.delta_ar,
            nl,
            cfg.segment.curvature_offset,
        );
        let tail_ctx = TailContext {
            image: img,
            centre,
            sigmas: &self.sigmas,
            weights: &cfg.classify.weights,
            position_certainty: cs,
        };
        let mut segments: Vec<(usize, Chain)> = Vec::new();
        for &ei in &selected {
            for chain in path_segment(&edges[ei].points, &win, &cfg.segment) {
                let profile = curvature_profile(&chain, nl);
                for piece in crate::segment::curvature_segment(&chain, &profile, krange.0, krange.1, nl) {
                    let prof = curvature_profile(&piece, nl);
                    let split = length_segment(&piece, &prof, c_hat, &tail_ctx);
                    if split.kept.len() >= nl {
                        segments.push((ei, split.kept));
                    }
                }
            }
        }
        diag.segments = segments.len();
        timings.segment = lap();

        // Classification.
        let pred = EdgePrediction {
            circumference: c_hat,
            curvature: state.curvature.prediction,
            gradient: state.gradient.prediction,
            intensity: state.intensity.prediction,
        };
        let mut traces: Vec<SegmentTrace> = segments
            .into_iter()
            .map(|(source, chain)| {
                let prof = curvature_profile(&chain, nl);
                let features = edge_features(&chain, centre, img, Some(&prof));
                let values = feature_values(&features, &pred);
                let score = edge_score(&values, &self.sigmas, &cfg.classify.weights, cs, ca).normalized();
                SegmentTrace { source, chain, features, values, score, classified: false, fit_member: false }
            })
            .collect();
        let scores: Vec<f64> = traces.iter().map(|t| t.score).collect();
        let mut chosen = classify_edges(&scores, cfg.classify.weights.threshold, cs, ca);
        for &i in &chosen {
            traces[i].classified = true;
        }
        diag.classified = chosen.len();
        chosen.truncate(filters.max_edges);
        timings.classify = lap();

        // Ellipse fitting.
        let fit_edges: Vec<(Vec<Vec2>, f64)> = chosen
            .iter()
            .map(|&i| {
                let t = &traces[i];
                let on: HashSet<Pixel> = t.chain.points.iter().copied().collect();
                let mut pts: Vec<Vec2> = t.chain.points.iter().map(|p| p.to_vec()).collect();
                for q in &edges[t.source].tagged {
                    if q.neighbours().iter().any(|n| on.contains(n)) {
                        pts.push(q.to_vec());
                    }
                }
                (pts, t.chain.length())
            })
            .collect();
        let ctx = FitContext {
            circumference: c_hat,
            aspect_ratio: ar_hat,
            width: state.width.prediction,
            height: state.height.prediction,
            angle: state.angle.prediction,
            delta_c: aoi.delta_c,
            delta_ar: aoi.delta_ar,
            appearance_certainty: ca,
        };
        let mut cands = enumerate_candidates(&fit_edges, &ctx, filters);
        diag.candidates = cands.len();
        let deadline = (cfg.pipeline.time_cap_ms > 0.0)
            .then(|| start + Duration::from_secs_f64(cfg.pipeline.time_cap_ms / 1000.0));
        fit_candidates(&mut cands, &ctx, filters, deadline);
        let selection = score_and_select(&mut cands, &ctx, &cfg.ellipse.weights, &cfg.ellipse.sigmas, filters);
        diag.rejects = cands.iter().filter_map(|c| c.reject).collect();
        timings.fit = lap();

        // Estimator update.
        let limits = self.limits();
        let mut measurement = None;
        if let Some(sel) = &selection {
            let mut members: Vec<usize> = sel.accepted.iter().flat_map(|&c| cands[c].members.iter().copied()).collect();
            members.sort_unstable();
            members.dedup();
            let member_traces: Vec<usize> = members.iter().map(|&m| chosen[m]).collect();
            for &t in &member_traces {
                traces[t].fit_member = true;
            }
            let mean = |get: fn(&EdgeFeatures) -> Option<f64>| {
                let (mut s, mut wsum) = (0.0, 0.0);
                for &t in &member_traces {
                    if let Some(v) = get(&traces[t].features) {
                        s += v * traces[t].features.length;
                        wsum += traces[t].features.length;
                    }
                }
                (wsum > 0.0).then(|| s / wsum)
            };
            let p = sel.params;
            let m = PupilMeasurement {
                cx: p.cx,
                cy: p.cy,
                circumference: p.circumference,
                aspect_ratio: p.aspect_ratio,
                width: p.width,
                height: p.height,
                angle: p.angle,
                intensity: mean(|f| f.intensity),
                gradient: mean(|f| f.gradient),
                curvature: mean(|f| f.curvature),
            };
            state.update_with_deltas(&m, state.deltas(&m), &cfg.estimator, limits);
            measurement = Some(m);
        } else {
            diag.miss = Some(if area.area() == 0 {
                MissReason::EmptySearchArea
            } else if edges.is_empty() {
                MissReason::NoEdges
            } else if traces.is_empty() {
                MissReason::NoCandidateEdges
            } else if chosen.is_empty() {
                MissReason::NoClassifiedEdges
            } else if cands.is_empty() {
                MissReason::NoCombinations
            } else {
                MissReason::AllFitsRejected
            });
            state.update_on_miss(&cfg.estimator, limits);
        }
        timings.update = lap();
        timings.total = start.elapsed().as_micros() as u64;

        let result = FrameResult {
            frame,
            detected: measurement.is_some(),
            measurement,
            ellipse: selection.as_ref().map(|s| s.params),
            search_centre: centre,
            position_certainty: state.position_certainty,
            appearance_certainty: state.appearance_certainty,
            timings,
            diagnostics: diag,
        };
        let trace = want_trace.then(|| FrameTrace {
            aoi,
            glint,
            haar,
            edge_area: area,
            edge_count: edges.len(),
            selected: selected.iter().map(|&i| edges[i].points.clone()).collect(),
            curvature_range: krange,
            segments: traces,
            candidates: cands,
            selection,
        });
        (result, state, trace)
    }
}

/// Runs a whole sequence from the exploratory state.
pub fn track<'a>(pipeline: &Pipeline, frames: impl IntoIterator<Item = &'a GrayImage>) -> Vec<(FrameResult, PupilState)> {
    let mut state = pipeline.initial_state();
    let mut out = Vec::new();
    for (i, img) in frames.into_iter().enumerate() {
        let (r, s) = pipeline.process_frame(img, &state, i);
        state = s.clone();
        out.push((r, s));
    }
    out
}
