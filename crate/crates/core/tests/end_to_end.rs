//! Scripted press, shear and twist through the whole pipeline, checked against
//! the renderer's truth.

use teletact::frame::DepthMap;
use teletact::pipeline::{synthetic_lut, Pipeline, PipelineConfig, Scenario};
use teletact::stagekin::reference_calibration;

fn bilinear(d: &DepthMap, [x, y]: [f64; 2]) -> f64 {
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let z = |x: usize, y: usize| d.z[(x, y)];
    (1.0 - fy) * ((1.0 - fx) * z(x0, y0) + fx * z(x0 + 1, y0)) + fy * ((1.0 - fx) * z(x0, y0 + 1) + fx * z(x0 + 1, y0 + 1))
}

fn run(gain: f64) {
    let mut cfg = PipelineConfig::default();
    cfg.grid.gain = gain;
    let mut p = Pipeline::with_parts(cfg, synthetic_lut(&Default::default()).unwrap(), reference_calibration()).unwrap();
    let s = Scenario::by_name("scripted").unwrap();
    let mut last = None;
    for i in 0..s.len() {
        let (frame, kf) = s.render(i).unwrap();
        let st = p.tick(&frame, None, Some(&kf.label));
        assert!(!st.degraded, "frame {i}: {:?}", st.error);
        last = Some((frame, st));
    }
    let (frame, st) = last.unwrap();
    assert_eq!(st.label.as_deref(), Some("hold"));

    let truth = frame.truth_depth().unwrap();
    let pins: Vec<f64> = st.grid_points.iter().map(|&p| (gain * bilinear(truth, p)).min(3.0)).collect();
    for (i, (&got, &want)) in st.targets.extension_mm.iter().zip(&pins).enumerate() {
        assert!((got - want).abs() <= 0.1, "pin {i}: {got:.3} vs truth {want:.3}");
    }
    let truth_peak = pins.iter().cloned().fold(0.0, f64::max);
    let display_peak = st.display_mm.iter().cloned().fold(0.0, f64::max);
    assert!((display_peak - truth_peak).abs() <= 0.1, "display {display_peak:.3} vs {truth_peak:.3}");

    let pose = st.stage.pose;
    assert!(!st.stage.saturated);
    assert!((pose.x_mm - 0.375).abs() <= 0.1 && pose.y_mm.abs() <= 0.1, "{pose:?}");
    assert!((pose.phi_deg - 5.0).abs() <= 0.5, "{pose:?}");
}

#[test]
fn scripted_contact_matches_truth() {
    run(1.0);
}

#[test]
fn scripted_contact_with_gain() {
    run(1.5);
}
