use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use pupiltrack::config::Config;
use pupiltrack::pipeline::Pipeline;
use pupiltrack_harness::calibrate::{
    calibrate_classifier, calibrate_fit_error, classifier_pass_rate, edge_samples, fit_samples,
    regenerate_curvature_model,
};
use pupiltrack_harness::dataset::{load_labels, write_trial, DatasetManifest};
use pupiltrack_harness::eval::{evaluate, load_results, parse_thresholds, timing_histogram};
use pupiltrack_harness::runner::{detect_manifest, run_frames, DetectOptions};
use pupiltrack_harness::server::{serve, AppState};
use pupiltrack_harness::synth::{synthesize_sequence, SynthSpec};

// Frame buffers are large enough that the system allocator maps and unmaps them every frame.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "pupiltrack", version, about = "Pupil detection for high-frame-rate eye images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Configuration file (TOML); absent keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set estimator.alpha_position=0.6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        cfg.apply_overrides(self.overrides.iter().map(String::as_str))?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the detector on every trial of a manifest and write JSON Lines results.
    Detect {
        manifest: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write the estimator state after every frame.
        #[arg(long)]
        dump_state: bool,
        /// Also write every fit candidate with its filter verdict.
        #[arg(long)]
        dump_fits: bool,
        /// Write frames with the detection drawn on them.
        #[arg(long)]
        overlay_dir: Option<PathBuf>,
        /// Directory for result files instead of the manifest's locations.
        #[arg(long)]
        results_dir: Option<PathBuf>,
        /// Write zero frame times so repeated runs produce identical files.
        #[arg(long)]
        zero_timing: bool,
    },
    /// Detection-rate curve of a result stream against labels, as CSV.
    Eval {
        results: PathBuf,
        labels: PathBuf,
        /// `start:stop:step` or a comma-separated list, in pixels.
        #[arg(long, default_value = "0:10:0.25")]
        thresholds: String,
        /// Also write the frame-time histogram to this CSV file and print its summary.
        #[arg(long)]
        timing: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        bin_ms: f64,
    },
    /// Render synthetic trials with ground-truth labels and a manifest.
    Synth {
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Number of trials; trial k uses seed `seed + k`.
        #[arg(long, default_value_t = 1)]
        trials: u64,
    },
    /// Regenerate the curvature model table.
    CalibrateCurvature {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit classifier score curves to the edges of accepted fits over a labelled corpus.
    CalibrateClassifier {
        manifest: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-derive the fit-error intercept and threshold from a labelled corpus.
    CalibrateFitError {
        manifest: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Serve frames, labels and results for the labelling UI.
    LabelServer {
        manifest: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory of static UI assets.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

fn pipeline_for(cfg: &Config, m: &DatasetManifest) -> Result<Pipeline> {
    Ok(Pipeline::new(cfg, m.width, m.height, m.fps)?)
}

/// Traced runs of every trial paired with its labels.
fn traced_runs(
    cfg: &Config,
    manifest_path: &Path,
) -> Result<Vec<(Vec<pupiltrack_harness::runner::FrameRun>, Vec<pupiltrack_harness::dataset::LabelRecord>)>> {
    let m = DatasetManifest::load(manifest_path)?;
    let p = pipeline_for(cfg, &m)?;
    let mut out = Vec::new();
    for t in &m.trials {
        let frames = m.frame_paths(t)?;
        let runs = run_frames(&p, frames.iter().map(|f| pupiltrack_harness::dataset::load_frame(f)), true)?;
        let labels = load_labels(&m.labels_path(t)).unwrap_or_default();
        out.push((runs, labels));
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Detect { manifest, config, dump_state, dump_fits, overlay_dir, results_dir, zero_timing } => {
            let cfg = config.load()?;
            let m = DatasetManifest::load(&manifest)?;
            let p = pipeline_for(&cfg, &m)?;
            let opts = DetectOptions { dump_state, dump_fits, overlay_dir, results_dir, zero_timing };
            for r in detect_manifest(&p, &m, &opts)? {
                let detected = r.records.iter().filter(|x| x.detected).count();
                let mean_ms = r.records.iter().map(|x| x.time_us as f64).sum::<f64>() / r.records.len() as f64 / 1000.0;
                println!(
                    "{}: {}/{} frames detected, mean {:.2} ms, results {}",
                    r.id,
                    detected,
                    r.records.len(),
                    mean_ms,
                    r.results_path.display()
                );
            }
        }
        Command::Eval { results, labels, thresholds, timing, bin_ms } => {
            let recs = load_results(&results)?;
            let labels = load_labels(&labels)?;
            let curve = evaluate(&recs, &labels, &parse_thresholds(&thresholds)?)?;
            print!("{}", curve.to_csv());
            if let Some(path) = timing {
                let h = timing_histogram(&recs.iter().map(|r| r.time_us).collect::<Vec<_>>(), bin_ms)?;
                std::fs::write(&path, h.to_csv()).with_context(|| format!("writing {}", path.display()))?;
                eprintln!("frames {}, mean {:.3} ms, p95 {:.3} ms, max {:.3} ms", h.frames, h.mean_ms, h.p95_ms, h.max_ms);
            }
        }
        Command::Synth { spec, seed, out, trials } => {
            let text = std::fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec = SynthSpec::from_toml_str(&text)?;
            if trials == 0 {
                bail!("--trials must be at least 1");
            }
            let mut entries = Vec::new();
            for k in 0..trials {
                let s = seed + k;
                let seq = synthesize_sequence(&spec, s)?;
                entries.push(write_trial(&out, &format!("seed{s}"), &seq.frames, &seq.labels)?);
            }
            let manifest =
                DatasetManifest { fps: spec.fps, width: spec.width, height: spec.height, trials: entries, root: out.clone() };
            manifest.save(&out.join("manifest.json"))?;
            println!("wrote {} trial(s) to {}", trials, out.display());
        }
        Command::CalibrateCurvature { out } => {
            let model = regenerate_curvature_model();
            std::fs::write(&out, model.to_text()).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
        }
        Command::CalibrateClassifier { manifest, config, out } => {
            let cfg = config.load()?;
            let runs = traced_runs(&cfg, &manifest)?;
            let all: Vec<_> = runs.into_iter().flat_map(|(r, _)| r).collect();
            let samples = edge_samples(&all);
            let cal = calibrate_classifier(&samples, &cfg.classify.weights, &cfg.classify.sigmas)?;
            std::fs::write(&out, cal.to_text()).with_context(|| format!("writing {}", out.display()))?;
            let pos = samples.iter().filter(|s| s.positive).count();
            let rate = classifier_pass_rate(&samples, &cal, &cfg.classify.weights).unwrap_or(0.0);
            println!("{} edges ({} in accepted fits), pass rate {:.4}; wrote {}", samples.len(), pos, rate, out.display());
        }
        Command::CalibrateFitError { manifest, config } => {
            let cfg = config.load()?;
            let mut samples = Vec::new();
            for (runs, labels) in traced_runs(&cfg, &manifest)? {
                samples.extend(fit_samples(&runs, &labels));
            }
            print!("{}", calibrate_fit_error(&samples)?.to_toml());
        }
        Command::LabelServer { manifest, port, ui_dir } => {
            let m = DatasetManifest::load(&manifest)?;
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(serve(AppState::new(m, ui_dir), port))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
