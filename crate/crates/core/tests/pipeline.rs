//! End-to-end library pipeline: corpus, training, paired mode comparison.

use nnilc::config::ExperimentConfig;
use nnilc::neural::{evaluate_mse, fit};
use nnilc::scenario::{
    build_training_corpus, compare_modes, frequency_grid, run_ilc_experiment, ExperimentOptions, RunMode, WarmStart,
};

#[test]
fn warm_start_beats_conventional_after_every_switch() {
    let cfg = ExperimentConfig::default();
    let setup = cfg.build_setup().unwrap();
    let template = cfg.reference.command(0.5).unwrap();
    let corpus = build_training_corpus(&setup, &template, &frequency_grid(0.5, 0.9, 8), 20).unwrap();
    assert!(corpus.entries.iter().all(|e| e.final_mse < 0.1 * e.first_mse));

    let init = cfg.nn.init_model().unwrap();
    let (model, curve) = fit(&init, &corpus.data, &cfg.training).unwrap();
    assert_eq!(curve.len(), cfg.training.epochs);
    assert!(evaluate_mse(&model, &corpus.data) < 0.1 * corpus.data.target_variance());

    let schedule = cfg.schedule().unwrap();
    let opts = ExperimentOptions::default();
    let conv = run_ilc_experiment(&setup, RunMode::Ilc, &schedule, None, opts).unwrap();
    let nn = run_ilc_experiment(&setup, RunMode::IlcWithNn, &schedule, Some(&model), opts).unwrap();
    assert_eq!(nn.warm_start, WarmStart::LinearPlusNetwork);
    let cmp = compare_modes(&schedule, &conv, &nn, 1.2).unwrap();
    assert!(cmp.switches_present);
    assert!(cmp.nn_first_lower_at_all_switches);
    assert!(cmp.nn_fewer_iterations_at_all_switches);
    // Warm starting is never worse by the end of a segment.
    for s in &cmp.switches {
        let end = s.iteration + schedule.segments[s.segment].iterations - 1;
        assert!(nn.records[end].mse <= conv.records[end].mse, "segment {}", s.segment);
    }
}
