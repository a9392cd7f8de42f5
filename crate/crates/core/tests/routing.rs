mod common;

use std::collections::BTreeMap;

use mathagent::backend::BackendFactory;
use mathagent::cli::{build_pipeline, load_config, load_samples};
use mathagent::pipeline::AblationMode;
use mathagent::visual::TypeSource;

#[test]
fn call_matrix_matches_routing_table() {
    for mode in AblationMode::ALL {
        let detections = common::run_fixture(mode);
        let got: BTreeMap<&str, _> = detections.iter().map(|d| (d.sample_id.as_str(), common::calls(d))).collect();
        assert_eq!(got, common::expected_calls(mode), "{mode}");
    }
}

#[test]
fn full_mode_transcribes_exactly_the_inconsistent_samples() {
    for d in common::run_fixture(AblationMode::Full) {
        let (_, p2, _) = common::calls(&d);
        match &d.trace.phase1 {
            Some(v) => assert_eq!(p2 > 0, !v.consistent, "{}", d.sample_id),
            None => assert_eq!(p2, 0, "{}", d.sample_id),
        }
        assert_eq!(d.trace.phase2.is_some(), p2 > 0, "{}", d.sample_id);
    }
}

#[test]
fn no_validator_transcribes_every_imaged_sample() {
    for d in common::run_fixture(AblationMode::NoValidator) {
        let imaged = !matches!(d.sample_id.as_str(), "s11" | "s12");
        assert_eq!(d.trace.phase2.is_some(), imaged, "{}", d.sample_id);
        assert!(d.trace.phase1.is_none());
    }
}

#[test]
fn image_free_samples_never_reach_phases_one_and_two() {
    for mode in AblationMode::ALL {
        for d in common::run_fixture(mode).iter().filter(|d| matches!(d.sample_id.as_str(), "s11" | "s12")) {
            let (p1, p2, _) = common::calls(d);
            assert_eq!((p1, p2), (0, 0), "{mode} {}", d.sample_id);
        }
    }
}

#[test]
fn no_interpreter_ignores_question_type() {
    for d in common::run_fixture(AblationMode::NoInterpreter) {
        if let Some(t) = &d.trace.phase2 {
            assert_eq!(t.source, TypeSource::Skipped);
            assert_eq!(t.question_type, None);
        }
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let loaded = load_config(&common::fixture("ablation/config.json")).unwrap();
    let samples = load_samples(&loaded.resolve(&loaded.config.dataset_path)).unwrap();
    let one = build_pipeline(&loaded, &BackendFactory::default()).unwrap().run(&samples, AblationMode::Full, 1);
    let many = build_pipeline(&loaded, &BackendFactory::default()).unwrap().run(&samples, AblationMode::Full, 8);
    assert_eq!(one, many);
    let ids: Vec<_> = many.iter().map(|d| d.sample_id.as_str()).collect();
    assert_eq!(ids, samples.iter().map(|s| s.id.as_str()).collect::<Vec<_>>());
}
