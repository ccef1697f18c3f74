mod common;

use common::{frozen_memory_oracle, runs_identical, small_config, small_graph};
use mtgnn::memstore::validate_oplog;
use mtgnn::parallel::run_parallel;
use mtgnn::parallel::Prepared;
use mtgnn::trainer::{init_params, metrics_csv, random_mrr, reciprocal_rank, run_reference, run_training};
use mtgnn::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn daemon_run_matches_sequential_reference() {
    let g = small_graph(400, 1);
    let cfg = small_config(40, 2);
    let a = run_training(&cfg, &g).unwrap();
    let b = run_reference(&cfg, &g).unwrap();
    runs_identical(&a, &b).unwrap();
    validate_oplog(&a.groups[0].oplog, 1, 1).unwrap();
}

#[test]
fn frozen_weights_follow_the_memory_oracle() {
    let g = small_graph(400, 2);
    for k in [1, 2, 3] {
        let mut cfg = small_config(30, 2);
        cfg.train.k = k;
        cfg.train.q = k;
        cfg.train.lr_base = 0.0;
        cfg.record_snapshots = true;
        let (compared, mismatched) = frozen_memory_oracle(&cfg, &g).unwrap();
        assert!(compared > k);
        assert_eq!(mismatched, 0, "k = {k}");
    }
}

#[test]
fn replicas_stay_in_sync_and_traverse_the_budget() {
    let g = small_graph(500, 3);
    for (i, j, k) in [(2, 1, 1), (1, 2, 1), (1, 1, 2), (2, 2, 1), (1, 2, 2)] {
        let mut cfg = small_config(20, 3);
        cfg.train.i = i;
        cfg.train.j = j;
        cfg.train.k = k;
        cfg.train.q = i * j * k;
        let prep = Prepared::new(&cfg, &g).unwrap();
        let out = run_parallel(&prep, &init_params(&cfg, &g)).unwrap();
        assert!(out.replicas_consistent, "({i},{j},{k})");
        let processed: usize = out.iterations.iter().map(|r| r.events).sum();
        let want = cfg.train.epochs * prep.split.train.len();
        let slack = j * k * cfg.train.global_batch();
        assert!(processed >= want && processed < want + slack, "({i},{j},{k}): {processed} vs {want}");
        for report in &out.groups {
            validate_oplog(&report.oplog, i, j).unwrap();
        }
    }
}

#[test]
fn same_seed_same_metrics() {
    let g = small_graph(300, 4);
    let mut cfg = small_config(30, 2);
    cfg.evaluate = true;
    cfg.train.k = 2;
    cfg.train.q = 2;
    let strip = |s: String| s.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>();
    let a = strip(metrics_csv(&run_training(&cfg, &g).unwrap().metrics));
    let b = strip(metrics_csv(&run_training(&cfg, &g).unwrap().metrics));
    assert_eq!(a, b);
    assert!(a.len() >= 3);
}

#[test]
fn evaluation_rows_follow_epochs() {
    let g = small_graph(300, 5);
    let mut cfg = small_config(25, 3);
    cfg.evaluate = true;
    let out = run_training(&cfg, &g).unwrap();
    assert_eq!(out.metrics.len(), 3);
    for row in &out.metrics {
        let mrr = row.val_mrr.unwrap();
        assert!((1.0 / 50.0..=1.0).contains(&mrr));
        assert!(row.loss.is_finite());
    }
}

#[test]
fn loss_falls_over_the_first_epochs() {
    let g = small_graph(1500, 6);
    let mut cfg = small_config(100, 5);
    cfg.train.lr_base = 3e-3;
    let out = run_training(&cfg, &g).unwrap();
    let per_epoch: Vec<f64> = out
        .iterations
        .chunks(out.iterations.len() / 5)
        .map(|c| c.iter().map(|r| r.loss).sum::<f64>() / c.len() as f64)
        .collect();
    assert!(per_epoch[4] < per_epoch[0], "{per_epoch:?}");
}

#[test]
fn static_table_can_be_disabled() {
    let g = small_graph(400, 7);
    let mut cfg = small_config(40, 2);
    cfg.d_static = 0;
    cfg.evaluate = true;
    let out = run_training(&cfg, &g).unwrap();
    assert_eq!(out.params.static_table.data().len(), 0);
    assert!(out.metrics.iter().all(|m| m.val_mrr.is_some()));
}

#[test]
fn bad_configs_are_rejected_before_training() {
    let g = small_graph(200, 8);
    let mut cfg = small_config(20, 1);
    cfg.train.i = 3;
    assert!(matches!(run_training(&cfg, &g), Err(Error::Config(_)) | Err(Error::Planner(_))));
    let mut cfg = small_config(20, 1);
    cfg.train.j = 11;
    cfg.train.q = 11;
    assert!(run_training(&cfg, &g).is_err());
}

#[test]
fn random_scores_give_the_harmonic_mrr() {
    let expected = random_mrr(50);
    let harmonic: f64 = (1..=50).map(|r| 1.0 / r as f64).sum::<f64>() / 50.0;
    assert!((expected - harmonic).abs() < 1e-15);
    assert!((expected - 0.0899).abs() < 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 200_000;
    let total: f64 = (0..trials)
        .map(|_| {
            let negs: Vec<f64> = (0..49).map(|_| rng.gen()).collect();
            reciprocal_rank(rng.gen(), &negs)
        })
        .sum();
    let mc = total / trials as f64;
    // Standard deviation of one reciprocal rank is below 0.2.
    assert!((mc - expected).abs() < 5.0 * 0.2 / (trials as f64).sqrt(), "{mc} vs {expected}");
}

#[test]
fn ties_rank_the_truth_last() {
    assert_eq!(reciprocal_rank(0.0, &[0.0; 49]), 1.0 / 50.0);
    assert_eq!(reciprocal_rank(1.0, &[0.5, 2.0]), 0.5);
    assert_eq!(reciprocal_rank(3.0, &[0.5, 2.0]), 1.0);
}
