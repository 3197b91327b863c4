use gaussian_retro::scenarios::{builtin, run_scenario, RecordConfig, RecordSource};

#[test]
fn replaying_a_written_record_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = builtin("fig4").unwrap();
    cfg.grid.t_final = 0.5;
    let first = run_scenario(&cfg, &dir.path().join("sim"), dir.path()).unwrap();

    cfg.record = RecordConfig { source: RecordSource::File, path: Some("sim/record.csv".into()) };
    let replay = run_scenario(&cfg, &dir.path().join("replay"), dir.path()).unwrap();
    assert_eq!(first.record.increments(), replay.record.increments());
    // The replay recovers dW as dY minus its expectation, so means agree to
    // rounding only.
    for (a, b) in first.forward.states().iter().zip(replay.forward.states()) {
        assert_eq!(a.cov(), b.cov());
        assert!((a.mean() - b.mean()).amax() < 1e-10);
    }
    for (a, b) in first.past.iter().zip(&replay.past) {
        assert!((a.mean - b.mean).abs() < 1e-10 && (a.variance - b.variance).abs() < 1e-12);
    }
}

#[test]
fn mismatched_record_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = builtin("fig4").unwrap();
    cfg.grid.t_final = 0.5;
    run_scenario(&cfg, &dir.path().join("sim"), dir.path()).unwrap();
    cfg.grid.t_final = 0.4;
    cfg.record = RecordConfig { source: RecordSource::File, path: Some("sim/record.csv".into()) };
    assert!(run_scenario(&cfg, &dir.path().join("replay"), dir.path()).is_err());
}

#[test]
fn summary_reports_postselect_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = builtin("postselect").unwrap();
    cfg.grid.dt = 1e-3;
    run_scenario(&cfg, dir.path(), dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["name"], "postselect");
    assert!(json["analytic_max_rel_error"].as_f64().unwrap() < 1e-4);
    assert_eq!(json["variance_reduction_holds"], true);
}
