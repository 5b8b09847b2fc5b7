//! Frame loops over trials, result streams and debug dumps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pupiltrack::draw::EllipseShape;
use pupiltrack::estimator::PupilState;
use pupiltrack::pipeline::{FrameResult, FrameTrace, Pipeline, ResultRecord};
use pupiltrack::raster::GrayImage;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{load_frame, DatasetError, DatasetManifest, TrialEntry};

/// One processed frame with the state handed to the next frame.
#[derive(Debug, Clone)]
pub struct FrameRun {
    pub result: FrameResult,
    pub state: PupilState,
    pub trace: Option<FrameTrace>,
}

impl FrameRun {
    pub fn record(&self) -> ResultRecord {
        ResultRecord::new(&self.result, &self.state)
    }
}

/// Processes frames in order from the exploratory state.
pub fn run_frames<I, E>(pipeline: &Pipeline, frames: I, traced: bool) -> Result<Vec<FrameRun>, E>
where
    I: IntoIterator<Item = Result<GrayImage, E>>,
{
    let mut state = pipeline.initial_state();
    let mut out = Vec::new();
    for (n, img) in frames.into_iter().enumerate() {
        let img = img?;
        let run = if traced {
            let (result, next, trace) = pipeline.process_frame_traced(&img, &state, n);
            FrameRun { result, state: next, trace: Some(trace) }
        } else {
            let (result, next) = pipeline.process_frame(&img, &state, n);
            FrameRun { result, state: next, trace: None }
        };
        state = run.state.clone();
        out.push(run);
    }
    Ok(out)
}

/// In-memory frames.
pub fn run_images(pipeline: &Pipeline, frames: &[GrayImage], traced: bool) -> Vec<FrameRun> {
    let ok = frames.iter().map(|f| Ok::<_, std::convert::Infallible>(f.clone()));
    match run_frames(pipeline, ok, traced) {
        Ok(v) => v,
        Err(never) => match never {},
    }
}

#[derive(Debug, Clone, Default)]
pub struct DetectOptions {
    pub dump_state: bool,
    pub dump_fits: bool,
    pub overlay_dir: Option<PathBuf>,
    /// Result files go here instead of the manifest's result paths.
    pub results_dir: Option<PathBuf>,
    /// Write `time_us = 0` so result streams are byte-identical across runs.
    pub zero_timing: bool,
}

#[derive(Debug, Clone)]
pub struct TrialReport {
    pub id: String,
    pub results_path: PathBuf,
    pub records: Vec<ResultRecord>,
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for item in items {
        let line = serde_json::to_string(&item).expect("record serializes");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_records(path: &Path, records: &[ResultRecord]) -> Result<(), DatasetError> {
    write_lines(path, records)
}

#[derive(Serialize)]
struct StateLine<'a> {
    frame: usize,
    state: &'a PupilState,
}

#[derive(Serialize)]
struct FitsLine<'a> {
    frame: usize,
    candidates: &'a [pupiltrack::ellipse::FitCandidate],
    accepted: Option<&'a [usize]>,
}

/// Runs one trial of a manifest and writes its outputs.
pub fn detect_trial(
    pipeline: &Pipeline,
    manifest: &DatasetManifest,
    trial: &TrialEntry,
    opts: &DetectOptions,
) -> Result<TrialReport, DatasetError> {
    let paths = manifest.frame_paths(trial)?;
    let traced = opts.dump_fits;
    let frames = paths.iter().map(|p| load_frame(p));
    let runs = run_frames(pipeline, frames, traced)?;
    let records: Vec<ResultRecord> = runs
        .iter()
        .map(|r| {
            let rec = r.record();
            if opts.zero_timing {
                ResultRecord { time_us: 0, ..rec }
            } else {
                rec
            }
        })
        .collect();
    let results_path = match &opts.results_dir {
        Some(d) => d.join(format!("{}.jsonl", trial.id)),
        None => manifest.results_path(trial),
    };
    write_records(&results_path, &records)?;
    let side = |suffix: &str| results_path.with_file_name(format!("{}.{suffix}.jsonl", trial.id));
    if opts.dump_state {
        write_lines(&side("state"), runs.iter().map(|r| StateLine { frame: r.result.frame, state: &r.state }))?;
    }
    if opts.dump_fits {
        write_lines(
            &side("fits"),
            runs.iter().filter_map(|r| {
                let t = r.trace.as_ref()?;
                Some(FitsLine {
                    frame: r.result.frame,
                    candidates: &t.candidates,
                    accepted: t.selection.as_ref().map(|s| s.accepted.as_slice()),
                })
            }),
        )?;
    }
    if let Some(dir) = &opts.overlay_dir {
        let dir = dir.join(&trial.id);
        fs::create_dir_all(&dir).map_err(|source| DatasetError::Io { path: dir.clone(), source })?;
        for (p, r) in paths.iter().zip(&runs) {
            let mut img = load_frame(p)?;
            draw_overlay(&mut img, &r.result);
            let out = dir.join(crate::dataset::frame_file_name(r.result.frame));
            img.save_png(&out).map_err(|e| DatasetError::Format { path: out.clone(), message: e.to_string() })?;
        }
    }
    Ok(TrialReport { id: trial.id.clone(), results_path, records })
}

/// Runs every trial, one worker per trial.
pub fn detect_manifest(
    pipeline: &Pipeline,
    manifest: &DatasetManifest,
    opts: &DetectOptions,
) -> Result<Vec<TrialReport>, DatasetError> {
    manifest.trials.par_iter().map(|t| detect_trial(pipeline, manifest, t, opts)).collect()
}

fn plot(img: &mut GrayImage, x: f64, y: f64, v: u8) {
    let (xi, yi) = (x.round() as i64, y.round() as i64);
    if xi >= 0 && yi >= 0 && (xi as usize) < img.width() && (yi as usize) < img.height() {
        img.set(xi as usize, yi as usize, v);
    }
}

/// Outline of the detected ellipse plus a cross on the search centre.
pub fn draw_overlay(img: &mut GrayImage, result: &FrameResult) {
    if let Some(e) = result.ellipse {
        let shape = EllipseShape { cx: e.cx, cy: e.cy, a: e.a, b: e.b, angle: e.angle };
        let steps = (e.circumference * 2.0).ceil().max(16.0) as usize;
        let (s, c) = shape.angle.sin_cos();
        for k in 0..steps {
            let t = std::f64::consts::TAU * k as f64 / steps as f64;
            let (u, v) = (shape.a * t.cos(), shape.b * t.sin());
            plot(img, shape.cx + u * c - v * s, shape.cy + u * s + v * c, 255);
        }
        for d in -3..=3 {
            plot(img, e.cx + d as f64, e.cy, 255);
            plot(img, e.cx, e.cy + d as f64, 255);
        }
    }
    let p = result.search_centre;
    for d in -4..=4 {
        plot(img, p.x + d as f64, p.y + d as f64, 0);
        plot(img, p.x + d as f64, p.y - d as f64, 0);
    }
}
