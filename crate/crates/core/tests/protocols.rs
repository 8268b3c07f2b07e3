use iacn::data::{generate_synthetic, SyntheticSpec};
use iacn::eval::{
    delta_sweep, format_ablation, format_sweep, length_ablation, metrics_csv, sweep_deltas, ABLATION_LENGTHS,
    CSV_HEADER,
};
use iacn::training::TrainConfig;

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        num_users: 40,
        num_items: 200,
        num_interests: 5,
        interests_per_user: 2,
        num_categories: 3,
        rounds: 1,
        seed: 2,
        ..SyntheticSpec::default()
    }
}

fn config() -> TrainConfig {
    TrainConfig {
        d_orig: 4,
        d_aux: 4,
        num_negatives: 3,
        batch_size: 32,
        epochs: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn sweep_has_one_row_per_delta_and_reproduces() {
    let data = generate_synthetic(&SyntheticSpec {
        seq_len: 10,
        ..spec()
    })
    .unwrap()
    .dataset;
    let mut calls = 0;
    let (a, rows) = delta_sweep(&config(), &data, &[1, 2], &mut |_| {
        calls += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(calls, 20);
    assert_eq!(rows.len(), 20);
    assert_eq!(a.rows.iter().map(|r| r.delta).collect::<Vec<_>>(), sweep_deltas());
    for r in &a.rows {
        assert!((0.0..=1.0).contains(&r.mean_auc) && r.sd >= 0.0);
    }
    let (b, rows_b) = delta_sweep(&config(), &data, &[1, 2], &mut |_| Ok(())).unwrap();
    assert_eq!(a, b);
    assert_eq!(metrics_csv(&rows), metrics_csv(&rows_b));
    assert!(metrics_csv(&rows).starts_with(CSV_HEADER));
    assert_eq!(format_sweep(&a).lines().count(), 11);
}

#[test]
fn ablation_fills_the_grid() {
    let (a, rows) = length_ablation(&config(), &spec(), &[1, 2], &mut |_| Ok(())).unwrap();
    assert_eq!(rows.len(), 2 * ABLATION_LENGTHS.len() * 2);
    assert_eq!(a.cells.len(), 6);
    for &l in &ABLATION_LENGTHS {
        assert!(a.cell("din", l).is_some());
        assert!(a.cell("din+iacn", l).is_some());
    }
    let table = format_ablation(&a);
    assert_eq!(table.lines().count(), 3);
    assert!(table.starts_with("model\tl=10\tl=20\tl=50"));
    let (b, _) = length_ablation(&config(), &spec(), &[1, 2], &mut |_| Ok(())).unwrap();
    assert_eq!(a, b);
}

#[test]
fn failing_progress_aborts_the_sweep() {
    let data = generate_synthetic(&spec()).unwrap().dataset;
    let r = delta_sweep(&config(), &data, &[1, 2], &mut |rows| {
        if rows.len() == 3 {
            Err(iacn::Error::Config("stop".into()))
        } else {
            Ok(())
        }
    });
    assert!(r.is_err());
}
