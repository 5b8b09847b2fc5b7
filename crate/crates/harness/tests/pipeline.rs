use pupiltrack::config::Config;
use pupiltrack::draw::{fill_ellipse, EllipseShape};
use pupiltrack::pipeline::Pipeline;
use pupiltrack::raster::GrayImage;
use pupiltrack_harness::eval::{centre_errors, curve_from_errors};
use pupiltrack_harness::runner::run_images;
use pupiltrack_harness::synth::{synthesize_sequence, SynthSpec};

fn pipeline() -> Pipeline {
    Pipeline::new(&Config::default(), 400, 200, 250.0).unwrap()
}

#[test]
fn open_eye_saccade_sequence_is_tracked_within_two_pixels() {
    let mut spec = SynthSpec::default();
    spec.eyelid.enabled = false;
    let seq = synthesize_sequence(&spec, 0).unwrap();
    assert_eq!(seq.frames.len(), 300);
    let runs = run_images(&pipeline(), &seq.frames, false);
    let records: Vec<_> = runs.iter().map(|r| r.record()).collect();
    let curve = curve_from_errors(&centre_errors(&records, &seq.labels).unwrap(), &[2.0]);
    assert!(curve.detection_rate[0] >= 0.95, "rate at 2 px {}", curve.detection_rate[0]);
}

#[test]
fn reflection_on_the_pupil_border_stays_out_of_the_fit() {
    let (cx, cy, r) = (210.0, 96.0, 24.0);
    let (gx, gy, gr) = (cx + 0.85 * r, cy - 0.2 * r, 3.5);
    let mut img = GrayImage::filled(400, 200, 125);
    fill_ellipse(&mut img, &EllipseShape { cx, cy, a: r, b: r, angle: 0.0 }, 35, 4);
    fill_ellipse(&mut img, &EllipseShape { cx: gx, cy: gy, a: gr, b: gr, angle: 0.0 }, 250, 4);

    let p = pipeline();
    let mut state = p.initial_state();
    for n in 0..10 {
        state = p.process_frame(&img, &state, n).1;
    }
    let (result, _, trace) = p.process_frame_traced(&img, &state, 10);
    assert!(result.detected, "{:?}", result.diagnostics);
    let e = result.ellipse.unwrap();
    assert!(((e.cx - cx).powi(2) + (e.cy - cy).powi(2)).sqrt() <= 1.0, "{e:?}");

    let members: Vec<_> = trace.segments.iter().filter(|s| s.fit_member).flat_map(|s| s.chain.points.iter()).collect();
    assert!(!members.is_empty());
    for p in members {
        let d = ((p.x as f64 - cx).powi(2) + (p.y as f64 - cy).powi(2)).sqrt();
        assert!((d - r).abs() <= 1.5, "fit edge point {p:?} lies {d:.2} px from the centre");
    }
}
