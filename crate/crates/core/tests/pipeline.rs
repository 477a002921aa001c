use std::collections::BTreeSet;

use crossiris::evaluation::{collect_scores, CollectConfig, ScoreMode};
use crossiris::matcher::{hamming_similarity, Aggregation, MatchConfig};
use crossiris::pipeline::{Pipeline, PipelineConfig, PipelineError};
use crossiris::segmentation::SegmentationError;
use crossiris::sigset::parse_sigset;
use crossiris::synth::{
    generate_dataset, generate_identity_texture, render_sample, render_sample_with_geometry, Defect, SensorProfile,
    SynthConfig,
};

fn pipeline() -> Pipeline {
    Pipeline::new(PipelineConfig::default()).unwrap()
}

#[test]
fn same_eye_across_sensors_beats_different_eyes() {
    let p = pipeline();
    let none = BTreeSet::new();
    let t0 = generate_identity_texture(3, 0);
    let t1 = generate_identity_texture(3, 1);
    let enrolled = p.encode_eye(&render_sample(&t0, &SensorProfile::sensor_a(), 10, &none), "e").unwrap();
    let same = p.encode_eye(&render_sample(&t0, &SensorProfile::sensor_b(), 11, &none), "p").unwrap();
    let other = p.encode_eye(&render_sample(&t1, &SensorProfile::sensor_b(), 12, &none), "q").unwrap();
    let genuine = hamming_similarity(&enrolled, &same, false).unwrap().value;
    let imposter = hamming_similarity(&enrolled, &other, false).unwrap().value;
    assert!(genuine > 0.7, "genuine {genuine}");
    assert!((imposter - 0.5).abs() < 0.08, "imposter {imposter}");
}

#[test]
fn trace_recovers_rendered_geometry() {
    let t = generate_identity_texture(4, 2);
    let (img, g) = render_sample_with_geometry(&t, &SensorProfile::sensor_a(), 5, &BTreeSet::new());
    let trace = pipeline().trace(&img, "x").unwrap();
    let err = (trace.pupil.center.0 - g.pupil_center.0).hypot(trace.pupil.center.1 - g.pupil_center.1);
    assert!(err <= 1.0, "pupil center error {err}");
    let limbus_px = trace.polar.pupil_radius() + trace.boundary.mean_radius * trace.polar.radial_step();
    assert!((limbus_px - g.iris_radius).abs() <= 3.0, "limbus {limbus_px} vs {}", g.iris_radius);
    assert!(trace.code.is_accepted());
}

#[test]
fn blank_frame_fails_segmentation() {
    let t = generate_identity_texture(1, 1);
    for profile in [SensorProfile::sensor_a(), SensorProfile::sensor_b()] {
        let img = render_sample(&t, &profile, 2, &BTreeSet::from([Defect::NoIris]));
        match pipeline().encode_eye(&img, "blank") {
            Err(PipelineError::Segmentation(
                SegmentationError::NoPupilFound(_) | SegmentationError::BandTooThin { .. },
            )) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}

#[test]
fn gaze_shift_and_dilation_still_encode() {
    let t = generate_identity_texture(6, 0);
    let p = pipeline();
    let reference = p
        .encode_eye(&render_sample(&t, &SensorProfile::sensor_a(), 1, &BTreeSet::new()), "r")
        .unwrap();
    for defect in [Defect::GazeShift, Defect::DilatedPupil] {
        let img = render_sample(&t, &SensorProfile::sensor_a(), 2, &BTreeSet::from([defect]));
        let code = p.encode_eye(&img, "d").unwrap();
        let s = hamming_similarity(&reference, &code, false).unwrap().value;
        assert!(s > 0.55, "{defect:?}: similarity {s}");
    }
}

#[test]
fn defective_templates_are_excluded_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let config = SynthConfig {
        n_identities: 6,
        seed: 21,
        defect_rates: [(Defect::NoIris, 0.3)].into_iter().collect(),
        ..SynthConfig::default()
    };
    let plan = generate_dataset(&config, tmp.path()).unwrap();
    let blanks: BTreeSet<&str> = plan
        .samples
        .iter()
        .filter(|s| s.defects.contains(&Defect::NoIris))
        .map(|s| s.template_id.as_str())
        .collect();
    assert!(!blanks.is_empty());
    let sigset = parse_sigset(tmp.path().join("sigset.csv")).unwrap();
    assert_eq!(sigset, plan.sigset);
    let collected = collect_scores(&sigset, tmp.path(), &CollectConfig::default()).unwrap();
    let excluded: BTreeSet<&str> = collected.excluded_templates.iter().map(|t| t.template_id.as_str()).collect();
    assert_eq!(excluded, blanks);
    let scored = collected.scores.genuine().len() + collected.scores.imposter().len();
    assert_eq!(scored + collected.skipped_comparisons, sigset.comparisons.len());
    assert!(collected.skipped_comparisons > 0);
}

#[test]
fn identity_scores_fuse_enrolled_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let config = SynthConfig {
        n_identities: 5,
        samples_per_identity_per_sensor: 3,
        seed: 8,
        ..SynthConfig::default()
    };
    let plan = generate_dataset(&config, tmp.path()).unwrap();
    let pairwise = collect_scores(&plan.sigset, tmp.path(), &CollectConfig::default()).unwrap();
    let identity = collect_scores(
        &plan.sigset,
        tmp.path(),
        &CollectConfig {
            mode: ScoreMode::Identity(Aggregation::Max),
            matching: MatchConfig::default(),
            ..CollectConfig::default()
        },
    )
    .unwrap();
    // 5 identities x 3 probes; each probe meets its own identity once
    assert_eq!(identity.scores.genuine().len(), 15);
    assert_eq!(identity.scores.imposter().len(), 60);
    assert_eq!(pairwise.scores.genuine().len(), 45);
    // the max over an identity's samples is one of the pairwise scores
    for (pair, _, score) in identity.scores.records() {
        let best = pairwise
            .scores
            .records()
            .filter(|(p, _, _)| {
                p.probe == pair.probe
                    && plan.sigset.enrollment(&p.enrolled).is_some_and(|e| e.identity_id == pair.enrolled)
            })
            .map(|(_, _, s)| s)
            .fold(f64::MIN, f64::max);
        assert_eq!(score, best, "{pair:?}");
    }
}
