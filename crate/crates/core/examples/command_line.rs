// Driving the command-line interface in process: estimation, the ten
// bandwidth selectors, and the usage error for conflicting bandwidths.

use std::fmt::Write as _;

use rdsharp::simlab::{generate, DgpSpec};

/// Exit codes of the three invocations.
pub fn run_example() -> rdsharp::Result<Vec<i32>> {
    let data = generate(&DgpSpec::preset("curved")?, 800)?;
    let mut text = String::from("x,y\n");
    for (x, y) in data.scores().iter().zip(data.outcomes()) {
        let _ = writeln!(text, "{x},{y}");
    }
    let dir = std::env::temp_dir().join("rdsharp-cli-example");
    std::fs::create_dir_all(&dir).map_err(|source| rdsharp::RdError::Io { path: dir.clone(), source })?;
    let csv = dir.join("data.csv");
    std::fs::write(&csv, text).map_err(|source| rdsharp::RdError::Io { path: csv.clone(), source })?;
    let csv = csv.to_string_lossy().into_owned();
    let out = dir.to_string_lossy().into_owned();

    let runs: [Vec<&str>; 3] = [
        vec!["rdsharp", "estimate", "--data", &csv, "--score", "x", "--outcome", "y", "--format", "table", "--all", "--out", &out],
        vec!["rdsharp", "bwselect", "--data", &csv, "--score", "x", "--outcome", "y", "--all", "--format", "table"],
        vec!["rdsharp", "estimate", "--data", &csv, "--score", "x", "--outcome", "y", "--h", "0.2", "--bwselect", "mserd"],
    ];
    let codes: Vec<i32> = runs.iter().map(|args| rdsharp::cli::run(args.iter().copied())).collect();
    println!("exit codes: {codes:?}");
    Ok(codes)
}

fn main() -> rdsharp::Result<()> {
    run_example().map(|_| ())
}
