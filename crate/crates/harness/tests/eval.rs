use proptest::prelude::*;
use pupiltrack::pipeline::ResultRecord;
use pupiltrack_harness::dataset::LabelRecord;
use pupiltrack_harness::eval::{evaluate, parse_thresholds};

fn label(frame: usize, cx: f64, cy: f64) -> LabelRecord {
    LabelRecord { frame, cx, cy, a: 20.0, b: 15.0, angle: 30.0 }
}

fn result(frame: usize, detected: bool, cx: f64, cy: f64) -> ResultRecord {
    ResultRecord {
        frame,
        detected,
        cx,
        cy,
        circumference: 110.0,
        aspect_ratio: 0.75,
        angle_deg: 30.0,
        c_pos: 0.5,
        c_app: 0.5,
        time_us: 900,
    }
}

#[test]
fn results_equal_to_labels_are_perfect_at_every_threshold() {
    let labels: Vec<_> = (0..20).map(|i| label(i, 100.0 + i as f64 * 3.3, 80.0 - i as f64)).collect();
    let results: Vec<_> = labels.iter().map(|l| result(l.frame, true, l.cx, l.cy)).collect();
    let c = evaluate(&results, &labels, &parse_thresholds("0:10:0.25").unwrap()).unwrap();
    assert!(c.detection_rate.iter().all(|&r| r == 1.0));
    assert!(c.mean_error.iter().all(|&e| e == Some(0.0)));
}

#[test]
fn all_misses_score_zero_everywhere() {
    let labels: Vec<_> = (0..5).map(|i| label(i, 50.0, 50.0)).collect();
    let results: Vec<_> = (0..5).map(|i| result(i, false, 50.0, 50.0)).collect();
    let c = evaluate(&results, &labels, &[0.0, 1.0, 100.0]).unwrap();
    assert_eq!(c.detection_rate, vec![0.0; 3]);
    assert_eq!(c.mean_error, vec![None; 3]);
}

#[test]
fn unlabelled_results_are_ignored() {
    let labels = vec![label(3, 10.0, 10.0)];
    let results: Vec<_> = (0..6).map(|i| result(i, true, 10.0 + i as f64, 10.0)).collect();
    let c = evaluate(&results, &labels, &[2.0, 3.0]).unwrap();
    assert_eq!(c.detection_rate, vec![0.0, 1.0]);
    assert_eq!(c.mean_error[1], Some(3.0));
}

proptest! {
    #[test]
    fn detection_rate_is_monotone(errs in prop::collection::vec(prop::option::of(0.0f64..12.0), 1..60)) {
        let labels: Vec<_> = (0..errs.len()).map(|i| label(i, 0.0, 0.0)).collect();
        let results: Vec<_> = errs.iter().enumerate().map(|(i, e)| result(i, e.is_some(), e.unwrap_or(0.0), 0.0)).collect();
        let c = evaluate(&results, &labels, &parse_thresholds("0:10:0.25").unwrap()).unwrap();
        prop_assert!(c.is_monotone());
        for (i, &t) in c.thresholds.iter().enumerate() {
            let hits: Vec<f64> = errs.iter().flatten().copied().filter(|&e| e <= t).collect();
            prop_assert!((c.detection_rate[i] - hits.len() as f64 / errs.len() as f64).abs() < 1e-12);
            if let Some(m) = c.mean_error[i] {
                prop_assert!(hits.iter().all(|&e| e <= t) && m <= t + 1e-12);
            }
        }
    }
}
