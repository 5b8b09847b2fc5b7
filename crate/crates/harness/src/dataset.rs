//! Dataset manifests, frame directories and label files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pupiltrack::raster::GrayImage;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("manifest: {0}")]
    Invalid(String),
    #[error("unknown trial `{0}`")]
    UnknownTrial(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn fmt_err(path: &Path, message: impl ToString) -> DatasetError {
    DatasetError::Format { path: path.to_path_buf(), message: message.to_string() }
}

/// Hand- or generator-made ground truth for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub frame: usize,
    pub cx: f64,
    pub cy: f64,
    /// Semi-major axis, pixels.
    pub a: f64,
    /// Semi-minor axis, pixels.
    pub b: f64,
    /// Orientation of the major axis, degrees.
    pub angle: f64,
}

impl LabelRecord {
    pub fn validate(&self) -> Result<(), String> {
        let finite = [self.cx, self.cy, self.a, self.b, self.angle].iter().all(|v| v.is_finite());
        if !finite || !(self.b > 0.0 && self.a >= self.b) {
            return Err(format!("label for frame {} needs finite values and a >= b > 0", self.frame));
        }
        Ok(())
    }
}

pub fn parse_labels(text: &str) -> Result<Vec<LabelRecord>, String> {
    let labels: Vec<LabelRecord> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    for l in &labels {
        l.validate()?;
    }
    Ok(labels)
}

pub fn load_labels(path: &Path) -> Result<Vec<LabelRecord>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_labels(&text).map_err(|m| fmt_err(path, m))
}

/// Writes via a temporary file in the same directory and a rename, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

pub fn save_labels(path: &Path, labels: &[LabelRecord]) -> Result<(), DatasetError> {
    let text = serde_json::to_string_pretty(labels).expect("labels serialize");
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    pub id: String,
    /// Directory of frame images, read in file-name order.
    pub frames: PathBuf,
    pub labels: PathBuf,
    /// Result stream location; defaults to `results/<id>.jsonl` next to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub trials: Vec<TrialEntry>,
    /// Directory relative paths are resolved against; set on load.
    #[serde(skip)]
    pub root: PathBuf,
}

const FRAME_EXTENSIONS: [&str; 4] = ["png", "pgm", "pnm", "bmp"];

/// Frame files of a directory in name order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| fmt_err(path, e))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(path, text.as_bytes())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn trial(&self, id: &str) -> Result<&TrialEntry, DatasetError> {
        self.trials.iter().find(|t| t.id == id).ok_or_else(|| DatasetError::UnknownTrial(id.to_string()))
    }

    pub fn frames_dir(&self, t: &TrialEntry) -> PathBuf {
        self.resolve(&t.frames)
    }

    pub fn labels_path(&self, t: &TrialEntry) -> PathBuf {
        self.resolve(&t.labels)
    }

    pub fn results_path(&self, t: &TrialEntry) -> PathBuf {
        match &t.results {
            Some(p) => self.resolve(p),
            None => self.root.join("results").join(format!("{}.jsonl", t.id)),
        }
    }

    pub fn frame_paths(&self, t: &TrialEntry) -> Result<Vec<PathBuf>, DatasetError> {
        list_frames(&self.frames_dir(t))
    }

    /// Every referenced frame directory exists and holds at least one frame;
    /// trial ids are unique and usable in URLs.
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.fps > 0.0) || self.width == 0 || self.height == 0 {
            return Err(DatasetError::Invalid("fps and frame dimensions must be positive".into()));
        }
        if self.trials.is_empty() {
            return Err(DatasetError::Invalid("no trials".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.trials {
            if t.id.is_empty() || !t.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(DatasetError::Invalid(format!("trial id `{}` must be non-empty [A-Za-z0-9_-]", t.id)));
            }
            if !seen.insert(&t.id) {
                return Err(DatasetError::Invalid(format!("duplicate trial id `{}`", t.id)));
            }
            if self.frame_paths(t)?.is_empty() {
                return Err(DatasetError::Invalid(format!("trial `{}` has no frames", t.id)));
            }
        }
        Ok(())
    }
}

pub fn load_frame(path: &Path) -> Result<GrayImage, DatasetError> {
    GrayImage::load(path).map_err(|e| fmt_err(path, e))
}

pub fn frame_file_name(n: usize) -> String {
    format!("frame_{n:05}.png")
}

/// Writes frames as PNG files and the labels next to them; returns the trial entry
/// with paths relative to `root`.
pub fn write_trial(
    root: &Path,
    id: &str,
    frames: &[GrayImage],
    labels: &[LabelRecord],
) -> Result<TrialEntry, DatasetError> {
    let frames_rel = PathBuf::from(id).join("frames");
    let dir = root.join(&frames_rel);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for (n, img) in frames.iter().enumerate() {
        let p = dir.join(frame_file_name(n));
        img.save_png(&p).map_err(|e| fmt_err(&p, e))?;
    }
    let labels_rel = PathBuf::from(id).join("labels.json");
    save_labels(&root.join(&labels_rel), labels)?;
    Ok(TrialEntry { id: id.to_string(), frames: frames_rel, labels: labels_rel, results: None })
}
