use super::*;
use crate::config::ExperimentConfig;
use crate::neural::{Activation, DEFAULT_LAYER_SIZES};
use crate::signals::poly_mul;

fn setup_with(f: impl FnOnce(&mut ExperimentConfig)) -> LoopSetup {
    let mut cfg = ExperimentConfig::default();
    f(&mut cfg);
    cfg.build_setup().unwrap()
}

fn cmd(freq: f64) -> ReferenceCommand {
    ReferenceCommand::rest_start(0.05, freq).unwrap()
}

fn single(freq: f64, iterations: usize) -> TaskSchedule {
    TaskSchedule::new(vec![Segment { reference: cmd(freq), iterations }]).unwrap()
}

fn poly_add(p: &[f64], q: &[f64]) -> Vec<f64> {
    (0..p.len().max(q.len())).map(|i| p.get(i).unwrap_or(&0.0) + q.get(i).unwrap_or(&0.0)).collect()
}

/// Reference-to-output map of the linear loop with feedthrough:
/// `y = G (r + C (r - y))`, i.e. `T = G (1 + C) / (1 + G C)`.
fn closed_loop_reference_map(setup: &LoopSetup) -> DiscreteTransferFunction {
    let g = setup.true_linear_plant().unwrap();
    let c = setup.pi.transfer_function().unwrap();
    let num = poly_mul(g.numerator(), &poly_add(c.denominator(), c.numerator()));
    let den = poly_add(
        &poly_mul(g.denominator(), c.denominator()),
        &poly_mul(g.numerator(), c.numerator()),
    );
    DiscreteTransferFunction::new(num, den).unwrap()
}

#[test]
fn rest_equilibrium_without_excitation() {
    let setup = setup_with(|c| c.sensor.noise_variance = 0.0);
    let zero = Signal::zeros(setup.spec);
    let tr = run_trial(&setup, &zero, &zero, 1).unwrap();
    assert_eq!(tr.y.max_abs(), 0.0);
    assert_eq!(tr.y_hat.max_abs(), 0.0);
    assert_eq!(tr.u_fb.max_abs(), 0.0);
    assert_eq!(tr.t.len(), 6000);
}

#[test]
fn frictionless_feedback_matches_linear_closed_loop() {
    for kind in [PlantKind::Frictionless, PlantKind::Linear] {
        let setup = setup_with(|c| {
            c.sensor.noise_variance = 0.0;
            c.simulation.plant_kind = kind;
        });
        let (r, _) = setup.reference(&cmd(0.5));
        let tr = run_trial(&setup, &r, &r, 0).unwrap();
        let expected = closed_loop_reference_map(&setup).filter(&r).unwrap();
        let err = tr.y.sub(&expected).unwrap().max_abs();
        let tol = if kind == PlantKind::Linear { 1e-9 } else { 1e-6 } * r.max_abs();
        assert!(err < tol, "{kind:?}: {err}");
        // Bounded tracking error, below the reference excursion.
        assert!(compute_error(&r, &tr.y).unwrap().max_abs() < r.max_abs());
    }
}

/// Longest run of consecutive samples with |v| below `threshold` within
/// `half_width` samples of `centre`.
fn longest_still_run(v: &Signal, centre: usize, half_width: usize, threshold: f64) -> usize {
    let window = &v.samples()[centre.saturating_sub(half_width)..(centre + half_width).min(v.len())];
    window.split(|x| x.abs() >= threshold).map(|run| run.len()).max().unwrap_or(0)
}

#[test]
fn feedback_with_stiff_bristles_sticks_at_reversals() {
    // With the tabulated bristle stiffness the presliding range Fc / sigma0
    // is tens of millimetres, so reversals pass through elastic presliding.
    // Stiff, critically damped bristles and a firm loop show stick-slip.
    let setup = setup_with(|c| {
        c.sensor.noise_variance = 0.0;
        c.lugre.sigma0 = 1e6;
        c.lugre.sigma1 = 2.0 * (1e6 * c.plant.mass).sqrt();
        c.pi.kp = 20.0;
    });
    let (r, _) = setup.reference(&cmd(0.5));
    let tr = run_trial(&setup, &r, &r, 0).unwrap();
    assert!(tr.velocity.max_abs() > 1e-2, "the mass must slide between reversals");
    // Reference velocity crosses zero every second (half period).
    for reversal in 1..6 {
        let longest = longest_still_run(&tr.velocity, reversal * 1000, 300, 1e-5);
        assert!(longest >= 5, "reversal at {reversal} s: longest stuck run {longest}");
    }
}

#[test]
fn tabulated_bristles_reverse_through_presliding() {
    let setup = setup_with(|c| {
        c.sensor.noise_variance = 0.0;
        c.pi.kp = 20.0;
    });
    let (r, _) = setup.reference(&cmd(0.5));
    let tr = run_trial(&setup, &r, &r, 0).unwrap();
    for reversal in 1..6 {
        assert!(longest_still_run(&tr.velocity, reversal * 1000, 300, 1e-5) < 5);
    }
}

#[test]
fn single_task_ilc_compensates_friction() {
    let setup = setup_with(|_| {});
    let res = run_ilc_experiment(&setup, RunMode::Ilc, &single(0.5, 20), None, ExperimentOptions::default()).unwrap();
    let m = res.mse_history();
    assert_eq!(m.len(), 20);
    assert!(m[19] <= 0.1 * m[0], "{} vs {}", m[19], m[0]);
    for w in m.windows(2) {
        assert!(w[1] <= 1.05 * w[0], "{w:?}");
    }
}

#[test]
fn reference_switch_degrades_conventional_ilc() {
    let setup = setup_with(|_| {});
    let schedule = TaskSchedule::new(vec![
        Segment { reference: cmd(0.5), iterations: 10 },
        Segment { reference: cmd(0.6), iterations: 2 },
    ])
    .unwrap();
    let res = run_ilc_experiment(&setup, RunMode::Ilc, &schedule, None, ExperimentOptions::default()).unwrap();
    let m = res.mse_history();
    assert!(m[10] > m[9], "{} vs {}", m[10], m[9]);
    assert_eq!(res.records[10].segment, 1);
}

#[test]
fn replay_is_bit_identical() {
    let setup = setup_with(|_| {});
    let opts = ExperimentOptions { keep_traces: true, ..ExperimentOptions::default() };
    let a = run_ilc_experiment(&setup, RunMode::Ilc, &single(0.7, 3), None, opts).unwrap();
    let b = run_ilc_experiment(&setup, RunMode::Ilc, &single(0.7, 3), None, opts).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.traces, b.traces);
    assert_eq!(a.final_effort, b.final_effort);
    let other = setup_with(|c| c.master_seed = 5);
    let c = run_ilc_experiment(&other, RunMode::Ilc, &single(0.7, 3), None, opts).unwrap();
    assert_ne!(a.records[0].noise_seed, c.records[0].noise_seed);
}

#[test]
fn seeds_are_paired_across_modes() {
    let setup = setup_with(|_| {});
    let sched = single(0.6, 2);
    let a = run_ilc_experiment(&setup, RunMode::FeedbackOnly, &sched, None, ExperimentOptions::default()).unwrap();
    let b = run_ilc_experiment(&setup, RunMode::Ilc, &sched, None, ExperimentOptions::default()).unwrap();
    let seeds = |r: &ExperimentResult| r.records.iter().map(|x| x.noise_seed).collect::<Vec<_>>();
    assert_eq!(seeds(&a), seeds(&b));
    // First trial is identical: both start from zero effort.
    assert_eq!(a.records[0], b.records[0]);
    assert_ne!(seeds(&a)[0], seeds(&a)[1]);
}

#[test]
fn feedback_only_is_worst() {
    let setup = setup_with(|_| {});
    for f in [0.6, 0.8] {
        let fb = run_ilc_experiment(&setup, RunMode::FeedbackOnly, &single(f, 1), None, ExperimentOptions::default())
            .unwrap();
        let ilc = run_ilc_experiment(&setup, RunMode::Ilc, &single(f, 10), None, ExperimentOptions::default()).unwrap();
        assert!(fb.records[0].mse > ilc.records.last().unwrap().mse);
    }
}

#[test]
fn warm_start_without_network_is_linear_part() {
    let setup = setup_with(|_| {});
    let c = cmd(0.7);
    let (r, _) = setup.reference(&c);
    let u_l = linear_effort(&setup.ilc, &r).unwrap();
    assert_eq!(warm_start_effort(&setup, &c, None).unwrap(), u_l);
    let zero = MlpModel::zeros(&DEFAULT_LAYER_SIZES, Activation::Relu).unwrap();
    assert_eq!(warm_start_effort(&setup, &c, Some(&zero)).unwrap(), u_l);
}

#[test]
fn unstable_design_is_refused_unless_overridden() {
    let setup = setup_with(|c| c.ilc.beta = 2.5);
    let sched = single(0.5, 1);
    let err = run_ilc_experiment(&setup, RunMode::Ilc, &sched, None, ExperimentOptions::default()).unwrap_err();
    assert!(matches!(err, Error::ConvergencePrecheck(_)));
    let opts = ExperimentOptions { allow_unstable: true, ..ExperimentOptions::default() };
    assert!(run_ilc_experiment(&setup, RunMode::Ilc, &sched, None, opts).is_ok());
    // Feedback-only runs involve no learning and are never refused.
    assert!(run_ilc_experiment(&setup, RunMode::FeedbackOnly, &sched, None, ExperimentOptions::default()).is_ok());
}

#[test]
fn default_design_passes_both_checks() {
    let report = setup_with(|_| {}).stability_report().unwrap();
    assert!(report.monotonic_ok());
    assert!(report.trial_ok());
    let t = report.trial.as_ref().unwrap().trial.as_ref().unwrap();
    assert!(t.pointwise_ok);
}

#[test]
fn single_frequency_corpus_has_one_row_per_sample() {
    let setup = setup_with(|_| {});
    let corpus = build_training_corpus(&setup, &cmd(0.5), &[0.65], 3).unwrap();
    assert_eq!(corpus.data.len(), setup.spec.n());
    assert_eq!(corpus.frequency.len(), setup.spec.n());
    assert_eq!(corpus.entries.len(), 1);
}

#[test]
fn corpus_is_ordered_by_frequency_and_deterministic() {
    let setup = setup_with(|_| {});
    let freqs = [0.9, 0.5, 0.7];
    let a = build_training_corpus(&setup, &cmd(0.5), &freqs, 2).unwrap();
    let b = build_training_corpus(&setup, &cmd(0.5), &freqs, 2).unwrap();
    assert_eq!(a, b);
    let order: Vec<f64> = a.entries.iter().map(|e| e.frequency).collect();
    assert_eq!(order, freqs.to_vec());
    assert_eq!(a.frequency[0], 0.9);
    assert_eq!(a.frequency[6000], 0.5);
}

#[test]
fn frictionless_corpus_targets_are_near_zero() {
    let setup = setup_with(|c| c.simulation.plant_kind = PlantKind::Frictionless);
    let corpus = build_training_corpus(&setup, &cmd(0.5), &[0.5, 0.8], 20).unwrap();
    for (i, entry) in corpus.entries.iter().enumerate() {
        let rows = i * 6000..(i + 1) * 6000;
        let (r, _) = setup.reference(&ReferenceCommand { frequency: entry.frequency, ..cmd(0.5) });
        let u_l = linear_effort(&setup.ilc, &r).unwrap();
        let interior = 50..5950;
        let u_n: f64 = corpus.data.targets[rows][interior.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
        let ratio = u_n / u_l.norm_in(interior);
        assert!(ratio < 0.05, "f = {}: |u_n|/|u_l| = {ratio}", entry.frequency);
    }
}

#[test]
fn convergence_declaration() {
    assert!(has_converged(&[10.0, 5.0, 4.99, 4.98, 4.975]));
    assert!(!has_converged(&[10.0, 5.0, 4.0, 3.99, 3.98]));
    assert!(!has_converged(&[1.0, 1.0, 1.0]));
}

#[test]
fn frequency_grid_endpoints() {
    let g = frequency_grid(0.5, 0.9, 30);
    assert_eq!(g.len(), 30);
    assert_eq!(g[0], 0.5);
    assert!((g[29] - 0.9).abs() < 1e-15);
    assert_eq!(frequency_grid(0.5, 0.9, 1), vec![0.5]);
}
