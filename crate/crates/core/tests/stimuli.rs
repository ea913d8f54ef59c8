//! Each shape stimulus raises exactly the pins its outline covers.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use teletact::pipeline::{synthetic_lut, Pipeline, PipelineConfig, Scenario};
use teletact::stagekin::reference_calibration;

#[derive(Deserialize)]
struct Golden {
    threshold_mm: f64,
    grid: GridShape,
    patterns: BTreeMap<String, Vec<[usize; 2]>>,
}

#[derive(Deserialize)]
struct GridShape {
    cols: usize,
}

#[test]
fn raised_pins_match_golden_patterns() {
    let golden: Golden = serde_json::from_str(include_str!("fixtures/stimuli_golden.json")).unwrap();
    let mut p = Pipeline::with_parts(
        PipelineConfig::default(),
        synthetic_lut(&Default::default()).unwrap(),
        reference_calibration(),
    )
    .unwrap();
    let s = Scenario::by_name("stimuli").unwrap();
    let mut seen = BTreeSet::new();
    for i in 0..s.len() {
        let (frame, kf) = s.render(i).unwrap();
        let st = p.tick(&frame, None, Some(&kf.label));
        assert!(!st.degraded, "{}: {:?}", kf.label, st.error);
        // judge each shape on its last held frame
        let next = s.keyframes.get(i + 1).map(|k| k.label.as_str());
        if kf.label == "rest" || next == Some(kf.label.as_str()) {
            continue;
        }
        let want: BTreeSet<usize> = golden.patterns[&kf.label].iter().map(|[r, c]| r * golden.grid.cols + c).collect();
        let got: BTreeSet<usize> = (0..st.targets.extension_mm.len())
            .filter(|&k| st.targets.extension_mm[k] > golden.threshold_mm)
            .collect();
        assert_eq!(got, want, "{}: extensions {:?}", kf.label, st.targets.extension_mm);
        seen.insert(kf.label.clone());
    }
    assert_eq!(seen.len(), golden.patterns.len());
}
