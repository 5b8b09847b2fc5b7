use pupiltrack_harness::synth::{synthesize_sequence, trajectory, SaccadeSpec, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec() -> SynthSpec {
    SynthSpec { frames: 40, ..SynthSpec::default() }
}

#[test]
fn same_seed_renders_identical_sequences() {
    let spec = small_spec();
    let a = synthesize_sequence(&spec, 7).unwrap();
    let b = synthesize_sequence(&spec, 7).unwrap();
    assert_eq!(a.frames, b.frames);
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.coverage, b.coverage);
    let c = synthesize_sequence(&spec, 8).unwrap();
    assert_ne!(a.frames, c.frames);
}

#[test]
fn static_circle_labels_are_identical() {
    let seq = synthesize_sequence(&SynthSpec::static_circle(150.0, 12), 3).unwrap();
    assert_eq!(seq.labels.len(), 12);
    for l in &seq.labels {
        assert_eq!(*l, pupiltrack_harness::dataset::LabelRecord { frame: l.frame, ..seq.labels[0] });
    }
    assert!(seq.frames.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn eighty_pixel_saccade_over_twenty_frames_stays_below_eight_pixels_per_frame() {
    let spec = SynthSpec {
        frames: 400,
        saccades: SaccadeSpec {
            amplitude: [80.0, 80.0],
            fixation_frames: [10, 10],
            base_frames: 20.0,
            frames_per_px: 0.0,
            drift_sigma: 0.0,
        },
        ..SynthSpec::default()
    };
    for seed in 0..5 {
        let path = trajectory(&spec, &mut ChaCha8Rng::seed_from_u64(seed));
        let steps: Vec<f64> =
            path.windows(2).map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt()).collect();
        let max = steps.iter().cloned().fold(0.0, f64::max);
        // Peak min-jerk speed is 1.875 · 80 / 20 = 7.5 px per frame.
        assert!(max <= 8.0, "seed {seed}: {max}");
        assert!(max > 6.0, "seed {seed}: mid-saccade speed {max} should exceed 6 px");
    }
}

#[test]
fn eyelid_does_not_move_the_labels() {
    let mut open = SynthSpec { frames: 150, ..SynthSpec::default() };
    open.eyelid.enabled = false;
    let mut lid = open.clone();
    lid.eyelid.enabled = true;
    lid.eyelid.max_coverage = 0.4;
    let a = synthesize_sequence(&open, 11).unwrap();
    let b = synthesize_sequence(&lid, 11).unwrap();
    assert_eq!(a.labels, b.labels);
    let peak = b.coverage.iter().cloned().fold(0.0, f64::max);
    assert!(peak > 0.39 && peak <= 0.4, "coverage peaks at {peak}");
    assert_ne!(a.frames, b.frames);
}

#[test]
fn out_of_bounds_specs_are_rejected() {
    let tiny = SynthSpec { circumference: [40.0, 80.0], ..SynthSpec::default() };
    assert!(synthesize_sequence(&tiny, 0).is_err());
    let flat = SynthSpec { aspect_ratio: [0.2, 0.5], ..SynthSpec::default() };
    assert!(synthesize_sequence(&flat, 0).is_err());
    assert!(SynthSpec::from_toml_str("frames = 10\nunknown = 1\n").is_err());
    let parsed = SynthSpec::from_toml_str("frames = 10\n[eyelid]\nenabled = false\n").unwrap();
    assert_eq!(parsed.frames, 10);
    assert!(!parsed.eyelid.enabled);
}
