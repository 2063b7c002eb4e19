use himoe_core::experiment::{metrics_csv, run_once, DataSource};
use himoe_core::train::eval_batch;
use himoe_core::{GeneratorConfig, RunConfig, Split};

fn small() -> GeneratorConfig {
    GeneratorConfig {
        train_trials: 12,
        val_trials: 4,
        test_trials: 4,
        ..GeneratorConfig::default()
    }
}

fn cfg(extra: &[&str]) -> RunConfig {
    let mut sets: Vec<String> = vec!["epochs=3".into(), "missing.rate=0.2".into()];
    sets.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::load(None, &sets).unwrap()
}

#[test]
fn same_config_and_seed_give_identical_metrics_bytes() {
    let data = DataSource::Synthetic(small()).bundle(2).unwrap();
    for model in ["himoe", "baseline"] {
        let c = cfg(&[&format!("model={model}"), "seed=2"]);
        let a = run_once(&c, &data, |_| {}).unwrap();
        let b = run_once(&c, &data, |_| {}).unwrap();
        let ca = metrics_csv(&[&a.val, &a.test], 2, 0.2);
        let cb = metrics_csv(&[&b.val, &b.test], 2, 0.2);
        assert_eq!(ca, cb);
        assert_eq!(a.params, b.params);
        assert_eq!(ca.lines().count(), 1 + 2 * 5);
    }
}

#[test]
fn a_different_seed_changes_the_run() {
    let data = DataSource::Synthetic(small()).bundle(0).unwrap();
    let a = run_once(&cfg(&["seed=0"]), &data, |_| {}).unwrap();
    let b = run_once(&cfg(&["seed=1"]), &data, |_| {}).unwrap();
    assert_ne!(a.params, b.params);
}

#[test]
fn zero_lambda_and_disabled_alignment_train_identically() {
    let data = DataSource::Synthetic(small()).bundle(1).unwrap();
    let a = run_once(&cfg(&["loss.lambda=0"]), &data, |_| {}).unwrap();
    let b = run_once(&cfg(&["align.enabled=false"]), &data, |_| {}).unwrap();
    let loss = |r: &himoe_core::experiment::RunResult| r.history.iter().map(|h| (h.train_emo, h.val_loss)).collect::<Vec<_>>();
    assert_eq!(loss(&a), loss(&b));
    assert_eq!(a.params, b.params);
}

#[test]
fn long_schedule_values_are_accepted() {
    let c = cfg(&["epochs=75", "batch_size=32"]);
    assert_eq!(c.optim.epochs, 75);
    assert_eq!(c.optim.batch_size, 32);
}

#[test]
fn evaluation_masks_hit_the_requested_rate() {
    let data = DataSource::Synthetic(GeneratorConfig::default()).bundle(0).unwrap();
    // Ten masks of ~1,600 cells each; the repair step pulls the mean
    // slightly under the rate (by about r^M / M).
    let mut total = 0.0;
    for seed in 0..10 {
        let b = eval_batch(&data, Split::Test, 0.3, seed).unwrap();
        assert!(b.presence.empty_rows().is_empty());
        total += b.presence.absent_fraction();
    }
    let frac = total / 10.0;
    assert!((frac - 0.3).abs() < 0.015, "absent fraction {frac}");
    let b = eval_batch(&data, Split::Test, 0.3, 0).unwrap();
    assert_eq!(eval_batch(&data, Split::Test, 0.3, 0).unwrap(), b);
}
