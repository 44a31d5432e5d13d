// The falsification battery on one simulated dataset: covariate balance,
// the binomial window test, placebo cutoffs, donut holes and bandwidth
// sensitivity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdsharp::falsification::{
    bandwidth_sensitivity, binomial_window, covariate_balance_all, donut, placebo_cutoffs, FalsificationReport, ReportKind,
};
use rdsharp::simlab::{generate, DgpSpec};
use rdsharp::EstimationConfig;

pub fn run_example() -> rdsharp::Result<Vec<FalsificationReport>> {
    let base = generate(&DgpSpec::preset("linear")?, 2_500)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let age: Vec<f64> = base.scores().iter().map(|x| 40.0 + 5.0 * x + rng.random_range(-3.0..3.0)).collect();
    let data = base.with_covariates(vec!["age".into()], vec![age])?;
    let config = EstimationConfig::default();

    let binomial = binomial_window(&data, 0.05, 0.5)?;
    println!(
        "binomial window +/-0.05: {} vs {} units, p = {:.4}",
        binomial.n_left, binomial.n_right, binomial.p_value
    );

    let reports = vec![
        covariate_balance_all(&data, &config)?,
        placebo_cutoffs(&data, &[-0.5, -0.25, 0.25, 0.5], &config)?,
        donut(&data, &[0.0, 0.01, 0.02, 0.05], &config)?,
        bandwidth_sensitivity(&data, None, &config)?,
    ];
    for report in &reports {
        println!("{}", report.kind);
        for row in &report.rows {
            let label = match (report.kind, row.parameter) {
                (ReportKind::Sensitivity, Some(h)) => format!("h={h:.3}"),
                _ => row.label.clone(),
            };
            match &row.estimate {
                Some(e) => println!(
                    "  {:<12} tau {:>8.4}  robust p {:.3}  CI [{:.3}, {:.3}]",
                    label, e.tau_hat, e.p_robust, e.ci_robust.lo, e.ci_robust.hi
                ),
                None => println!("  {:<12} {}", label, row.error.as_deref().unwrap_or("")),
            }
        }
    }
    Ok(reports)
}

fn main() -> rdsharp::Result<()> {
    run_example().map(|_| ())
}
