// Point estimation and robust inference on a simulated design, first at a
// fixed bandwidth and then with the default data-driven bandwidth.

use rdsharp::simlab::{generate, DgpSpec};
use rdsharp::{analyze, BandwidthSpec, EstimationConfig, Kernel, RdEstimate};

pub fn run_example() -> rdsharp::Result<(RdEstimate, RdEstimate)> {
    let spec = DgpSpec::preset("curved")?;
    let data = generate(&spec, 2_000)?;

    let fixed = EstimationConfig {
        kernel: Kernel::Uniform,
        bandwidth: BandwidthSpec::Manual { h: (0.25, 0.25), b: None },
        ..EstimationConfig::default()
    };
    let fixed = analyze(&data, &fixed)?;
    let selected = analyze(&data, &EstimationConfig::default())?;

    for (label, e) in [("fixed h = 0.25, uniform", &fixed), ("mserd, triangular", &selected)] {
        println!("{label}");
        println!(
            "  tau_hat {:.4}  se {:.4}  CI_us [{:.4}, {:.4}]",
            e.tau_hat, e.se_conventional, e.ci_conventional.lo, e.ci_conventional.hi
        );
        println!(
            "  tau_bc  {:.4}  se {:.4}  CI_rbc [{:.4}, {:.4}]  h {:.4}  b {:.4}",
            e.tau_bc, e.se_robust, e.ci_robust.lo, e.ci_robust.hi, e.bandwidths.h_left, e.bandwidths.b_left
        );
    }
    println!("true jump: {}", spec.tau);
    Ok((fixed, selected))
}

fn main() -> rdsharp::Result<()> {
    run_example().map(|_| ())
}
