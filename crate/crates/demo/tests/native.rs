use gdgm_demo::{market_report, solver_trajectories, wavelet_responses};

#[test]
fn trajectories_start_at_one_and_track_exact_decay() {
    let rows = solver_trajectories(10, 1.0).unwrap();
    assert_eq!(rows.len(), 44);
    assert_eq!(&rows[..4], &[0.0, 1.0, 1.0, 1.0]);
    let last = &rows[40..];
    assert!((last[0] - 1.0).abs() < 1e-12);
    // Euler with step 0.1 gives 0.9^10; rk4 sits within 1e-5 of e^-1.
    assert!((last[2] - 0.9f64.powi(10)).abs() < 1e-12);
    assert!((last[3] - (-1.0f64).exp()).abs() < 1e-5);
    assert!(solver_trajectories(0, 1.0).is_err());
}

#[test]
fn wavelet_rows_sum_to_constant() {
    let order = 3;
    let samples = 21;
    let r = wavelet_responses(order, samples).unwrap();
    assert_eq!(r.len(), (order + 1) * samples);
    for s in 0..samples {
        let total: f64 = (0..=order).map(|i| r[i * samples + s]).sum();
        assert!((total - 2.0).abs() < 1e-12, "{total}");
    }
    // The lowest kernel passes eigenvalue 0, the highest passes 2.
    assert!(r[0] > 0.0 && r[samples - 1] == 0.0);
    assert!(r[order * samples] == 0.0 && r[(order + 1) * samples - 1] > 0.0);
}

#[test]
fn market_report_is_json_with_metrics() {
    let text = market_report(3, 240, 4).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["n_transactions"], 240);
    assert_eq!(v["val_auc"].as_array().unwrap().len(), 5);
    let auc = v["test"]["AUC"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
}
