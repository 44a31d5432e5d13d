// Loading a CSV file with missing values, cluster labels and covariates,
// then estimating the effect at a non-zero cutoff.

use std::fmt::Write as _;

use rdsharp::simlab::{generate, DgpSpec};
use rdsharp::{analyze, load_csv, split, ColumnMap, EstimationConfig, RdEstimate};

pub fn run_example() -> rdsharp::Result<RdEstimate> {
    let sim = generate(&DgpSpec { cutoff: 0.0, ..DgpSpec::preset("linear")? }, 1_200)?;
    let mut text = String::from("margin,vote,state,income\n");
    for (i, (x, y)) in sim.scores().iter().zip(sim.outcomes()).enumerate() {
        // shift the score so the cutoff sits at 50; every 100th outcome is missing
        let y = if i % 100 == 0 { "NA".to_string() } else { y.to_string() };
        let _ = writeln!(text, "{},{y},s{},{}", 50.0 + 10.0 * x, i % 30, (i % 7) as f64);
    }
    let path = std::env::temp_dir().join("rdsharp-csv-pipeline-example.csv");
    std::fs::write(&path, text).map_err(|source| rdsharp::RdError::Io { path: path.clone(), source })?;

    let columns = ColumnMap::new("margin", "vote").covariates(["income"]).cluster("state");
    let loaded = load_csv(&path, &columns, 50.0)?;
    let s = split(&loaded.data);
    println!(
        "loaded {} rows ({} dropped): {} control, {} treated, {} clusters",
        loaded.data.n(),
        loaded.dropped_rows,
        s.n_left,
        s.n_right,
        loaded.data.n_clusters()
    );
    let est = analyze(&loaded.data, &EstimationConfig { cluster: true, ..EstimationConfig::default() })?;
    println!("tau {:.4} (se {:.4}, {}), h {:.3}", est.tau_hat, est.se_conventional, est.vce, est.bandwidths.h_left);
    Ok(est)
}

fn main() -> rdsharp::Result<()> {
    run_example().map(|_| ())
}
