//! Every runnable example doubles as a smoke test.

macro_rules! example {
    ($name:ident) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!("../examples/", stringify!($name), ".rs"));
        }
    };
}

example!(estimate);
example!(bandwidth_selection);
example!(covariates_and_clusters);
example!(rd_plot);
example!(density_test);
example!(falsification);
example!(monte_carlo);
example!(csv_pipeline);
example!(command_line);

#[test]
fn estimate_recovers_the_jump_within_its_robust_interval_width() {
    let (fixed, selected) = estimate::run_example().unwrap();
    assert_eq!(fixed.bandwidths.h_left, 0.25);
    assert!(selected.bandwidths.h_left > 0.0 && selected.bandwidths.h_left < 1.0);
    assert!(selected.ci_robust.width() > selected.ci_conventional.width());
}

#[test]
fn bandwidth_example_reports_all_selectors_and_matches_closed_form() {
    let results = bandwidth_selection::run_example().unwrap();
    assert_eq!(results.len(), 10);
    let mserd = &results[0];
    let cerrd = results.iter().find(|r| r.selector.is_cer()).unwrap();
    assert!(cerrd.h_left < mserd.h_left);
}

#[test]
fn covariate_adjustment_shrinks_the_standard_error() {
    let c = covariates_and_clusters::run_example().unwrap();
    assert!(c.adjusted.se_conventional < c.plain.se_conventional);
    assert!(c.clustered.vce.contains("cluster"));
    let g = c.adjusted.covariate_gamma.as_ref().unwrap()[0];
    assert!((g - 0.5).abs() < 0.1, "gamma {g}");
}

#[test]
fn rd_plot_example_builds_and_exports() {
    let plot = rd_plot::run_example().unwrap();
    let dir = std::env::temp_dir().join("rdsharp-rd-plot-example");
    for name in ["plot.json", "plot.csv", "plot.svg"] {
        assert!(dir.join(name).is_file(), "{name}");
    }
    assert_eq!(plot.partition.left.j(), plot.partition.j_left);
}

#[test]
fn density_example_flags_sorting_only() {
    let (clean, sorted) = density_test::run_example().unwrap();
    assert!(clean.p_value > 0.05);
    assert!(sorted.statistic > 0.0);
}

#[test]
fn falsification_example_runs_every_report() {
    let reports = falsification::run_example().unwrap();
    assert_eq!(reports.len(), 4);
    assert!(reports.iter().all(|r| r.rows.iter().all(|row| row.estimate.is_some())));
}

#[test]
fn monte_carlo_example_is_reproducible() {
    let a = monte_carlo::run_example().unwrap();
    let b = monte_carlo::run_example().unwrap();
    assert_eq!(a.failed, 0);
    assert_eq!(a.mean_estimate.to_bits(), b.mean_estimate.to_bits());
    assert!(a.coverage.robust > 0.85);
}

#[test]
fn csv_pipeline_drops_missing_rows_and_keeps_clusters() {
    let est = csv_pipeline::run_example().unwrap();
    assert_eq!(est.cutoff, 50.0);
    assert!(est.vce.contains("cluster"));
    assert!((est.tau_hat - 1.0).abs() < 0.3);
}

#[test]
fn command_line_example_exit_codes() {
    assert_eq!(command_line::run_example().unwrap(), vec![0, 0, 2]);
}
