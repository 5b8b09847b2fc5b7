//! Detection-rate and error curves, timing histograms.
//!
//! A labelled frame counts as detected at threshold `t` only when the
//! pipeline flagged it detected and its centre lies within `t` pixels of the
//! label; misses count against every threshold.

use std::collections::HashMap;
use std::path::Path;

use pupiltrack::pipeline::ResultRecord;
use serde::{Deserialize, Serialize};

use crate::dataset::LabelRecord;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("label for frame {0} has no result record")]
    MissingResult(usize),
    #[error("result stream holds frame {0} more than once")]
    DuplicateResult(usize),
    #[error("labels hold frame {0} more than once")]
    DuplicateLabel(usize),
    #[error("no labelled frames")]
    NoLabels,
    #[error("bad threshold spec `{0}`")]
    Thresholds(String),
    #[error("no timing data")]
    NoTimings,
    #[error("{path}: {message}")]
    Read { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub thresholds: Vec<f64>,
    pub detection_rate: Vec<f64>,
    /// Mean centre error of the frames counted at each threshold; `None` when none counted.
    pub mean_error: Vec<Option<f64>>,
}

impl EvalCurve {
    pub fn is_monotone(&self) -> bool {
        self.detection_rate.windows(2).all(|w| w[0] <= w[1])
    }

    /// Rate and mean error at the first threshold not below `t`.
    pub fn at(&self, t: f64) -> Option<(f64, Option<f64>)> {
        let i = self.thresholds.iter().position(|&x| x >= t - 1e-12)?;
        Some((self.detection_rate[i], self.mean_error[i]))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["threshold_px", "detection_rate", "mean_error_px"]).expect("in-memory write");
        for i in 0..self.thresholds.len() {
            let err = self.mean_error[i].map(|e| format!("{e:.6}")).unwrap_or_default();
            w.write_record([format!("{}", self.thresholds[i]), format!("{:.6}", self.detection_rate[i]), err])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_thresholds(spec: &str) -> Result<Vec<f64>, EvalError> {
    let bad = || EvalError::Thresholds(spec.to_string());
    let nums = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let out: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, stop, step] = parts.as_slice() else { return Err(bad()) };
        let (start, stop, step) = (nums(start)?, nums(stop)?, nums(step)?);
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|k| start + k as f64 * step).collect()
    } else {
        spec.split(',').map(nums).collect::<Result<_, _>>()?
    };
    if out.is_empty() || out.iter().any(|t| !t.is_finite() || *t < 0.0) || out.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad());
    }
    Ok(out)
}

/// Centre error per labelled frame; `None` for frames without a detection.
pub fn centre_errors(results: &[ResultRecord], labels: &[LabelRecord]) -> Result<Vec<Option<f64>>, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::NoLabels);
    }
    let mut by_frame: HashMap<usize, &ResultRecord> = HashMap::new();
    for r in results {
        if by_frame.insert(r.frame, r).is_some() {
            return Err(EvalError::DuplicateResult(r.frame));
        }
    }
    let mut seen = std::collections::HashSet::new();
    labels
        .iter()
        .map(|l| {
            if !seen.insert(l.frame) {
                return Err(EvalError::DuplicateLabel(l.frame));
            }
            let r = by_frame.get(&l.frame).ok_or(EvalError::MissingResult(l.frame))?;
            Ok(r.detected.then(|| ((r.cx - l.cx).powi(2) + (r.cy - l.cy).powi(2)).sqrt()))
        })
        .collect()
}

pub fn curve_from_errors(errors: &[Option<f64>], thresholds: &[f64]) -> EvalCurve {
    let n = errors.len() as f64;
    let mut rate = Vec::with_capacity(thresholds.len());
    let mut mean = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let hits: Vec<f64> = errors.iter().flatten().copied().filter(|&e| e <= t).collect();
        rate.push(hits.len() as f64 / n);
        mean.push((!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64));
    }
    EvalCurve { thresholds: thresholds.to_vec(), detection_rate: rate, mean_error: mean }
}

pub fn evaluate(results: &[ResultRecord], labels: &[LabelRecord], thresholds: &[f64]) -> Result<EvalCurve, EvalError> {
    Ok(curve_from_errors(&centre_errors(results, labels)?, thresholds))
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRecord>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub fn load_results(path: &Path) -> Result<Vec<ResultRecord>, EvalError> {
    let read = |message: String| EvalError::Read { path: path.display().to_string(), message };
    let text = std::fs::read_to_string(path).map_err(|e| read(e.to_string()))?;
    parse_results(&text).map_err(read)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingHistogram {
    pub bin_ms: f64,
    /// `(bin start in ms, frame count)` for every non-empty bin, ascending.
    pub bins: Vec<(f64, usize)>,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub frames: usize,
}

/// Histogram of per-frame times in microseconds. The 95th percentile uses the nearest-rank rule.
pub fn timing_histogram(times_us: &[u64], bin_ms: f64) -> Result<TimingHistogram, EvalError> {
    if times_us.is_empty() {
        return Err(EvalError::NoTimings);
    }
    let ms: Vec<f64> = times_us.iter().map(|&t| t as f64 / 1000.0).collect();
    let mut counts: std::collections::BTreeMap<u64, usize> = std::collections::BTreeMap::new();
    for &m in &ms {
        *counts.entry((m / bin_ms).floor() as u64).or_default() += 1;
    }
    let mut sorted = ms.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(TimingHistogram {
        bin_ms,
        bins: counts.into_iter().map(|(k, c)| (k as f64 * bin_ms, c)).collect(),
        mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
        p95_ms: sorted[rank - 1],
        max_ms: sorted[sorted.len() - 1],
        frames: ms.len(),
    })
}

impl TimingHistogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_start_ms,frames\n");
        for (b, c) in &self.bins {
            s.push_str(&format!("{b},{c}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(frame: usize, detected: bool, cx: f64, cy: f64) -> ResultRecord {
        ResultRecord {
            frame,
            detected,
            cx,
            cy,
            circumference: 100.0,
            aspect_ratio: 1.0,
            angle_deg: 0.0,
            c_pos: 0.0,
            c_app: 0.0,
            time_us: 1000,
        }
    }

    fn label(frame: usize, cx: f64, cy: f64) -> LabelRecord {
        LabelRecord { frame, cx, cy, a: 10.0, b: 8.0, angle: 0.0 }
    }

    #[test]
    fn threshold_specs() {
        assert_eq!(parse_thresholds("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_thresholds("0:10:0.25").unwrap().len(), 41);
        assert_eq!(parse_thresholds("1,2,5").unwrap(), vec![1.0, 2.0, 5.0]);
        assert!(parse_thresholds("0:1").is_err());
        assert!(parse_thresholds("2,1").is_err());
        assert!(parse_thresholds("0:1:0").is_err());
    }

    #[test]
    fn mixed_errors_at_one_pixel() {
        let labels = [label(0, 0.0, 0.0), label(1, 0.0, 0.0), label(2, 0.0, 0.0)];
        let results = [rec(0, true, 0.5, 0.0), rec(1, true, 0.0, 1.5), rec(2, false, 0.0, 0.0)];
        let c = evaluate(&results, &labels, &[1.0]).unwrap();
        assert!((c.detection_rate[0] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.mean_error[0], Some(0.5));
    }

    #[test]
    fn misaligned_frames_are_errors() {
        let labels = [label(0, 0.0, 0.0), label(5, 0.0, 0.0)];
        let results = [rec(0, true, 0.0, 0.0)];
        assert!(matches!(evaluate(&results, &labels, &[1.0]), Err(EvalError::MissingResult(5))));
        let dup = [rec(0, true, 0.0, 0.0), rec(0, true, 0.0, 0.0)];
        assert!(matches!(evaluate(&dup, &labels[..1], &[1.0]), Err(EvalError::DuplicateResult(0))));
    }

    #[test]
    fn csv_layout() {
        let labels = [label(0, 0.0, 0.0)];
        let c = evaluate(&[rec(0, false, 0.0, 0.0)], &labels, &[0.0, 1.0]).unwrap();
        assert_eq!(c.to_csv(), "threshold_px,detection_rate,mean_error_px\n0,0.000000,\n1,0.000000,\n");
    }

    #[test]
    fn timing_bins() {
        let h = timing_histogram(&[2000; 10], 0.5).unwrap();
        assert_eq!(h.bins, vec![(2.0, 10)]);
        assert_eq!(h.mean_ms, 2.0);
        let mixed = [1000, 1200, 3000, 4100, 700];
        let h = timing_histogram(&mixed, 0.5).unwrap();
        assert!((h.mean_ms - 2.0).abs() < 1e-12);
        assert_eq!(h.p95_ms, 4.1);
        assert_eq!(h.bins.iter().map(|b| b.1).sum::<usize>(), 5);
        assert!(timing_histogram(&[], 0.5).is_err());
    }
}
