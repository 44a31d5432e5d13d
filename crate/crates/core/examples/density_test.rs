// Density continuity test at the cutoff, with and without sorting of units
// across the threshold.

use rdsharp::falsification::{density_test, DensityConfig, DensityTestResult};
use rdsharp::simlab::{generate, DgpSpec};

pub fn run_example() -> rdsharp::Result<(DensityTestResult, DensityTestResult)> {
    let config = DensityConfig::default();
    let clean = density_test(&generate(&DgpSpec::preset("linear")?, 3_000)?, &config)?;
    let sorted = density_test(&generate(&DgpSpec::preset("manipulated")?, 3_000)?, &config)?;
    for (label, r) in [("no manipulation", &clean), ("20% sorting", &sorted)] {
        println!(
            "{label:<16} f- {:.4}  f+ {:.4}  h {:.4}  T {:>7.3}  p {:.4}",
            r.f_left, r.f_right, r.h_left, r.statistic, r.p_value
        );
    }
    Ok((clean, sorted))
}

fn main() -> rdsharp::Result<()> {
    run_example().map(|_| ())
}
