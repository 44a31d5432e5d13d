//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 on data or numerical
//! errors (with a JSON error record on stdout). Options may also come from a
//! `key=value` file passed with `--config`; flags given on the command line
//! take precedence. `RDSHARP_OUT_DIR` sets the default output directory.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::bandwidth::{select_all, select_with, BandwidthSpec, Selector};
use crate::dataset::{load_csv, ColumnMap, RdData};
use crate::error::RdError;
use crate::falsification::{
    bandwidth_sensitivity, binomial_report, covariate_balance_all, density_report, density_test, donut,
    placebo_cutoffs, DensityConfig, FalsificationReport,
};
use crate::inference::{analyze, EstimationConfig};
use crate::kernels::Kernel;
use crate::output::{self, Envelope, RunManifest};
use crate::rdplot::{self, parse_binselect, BinChoice, PlotFormat, PlotOptions};
use crate::simlab::{run_density_experiment, run_experiment, DgpSpec};
use crate::variance::Vce;

pub const OUT_DIR_ENV: &str = "RDSHARP_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "rdsharp", version, about = "Sharp regression discontinuity analysis", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Point estimate, standard errors and confidence intervals.
    Estimate(EstimateArgs),
    /// Data-driven bandwidth selection.
    Bwselect(BwselectArgs),
    /// Binned RD plot with global polynomial fits.
    Plot(PlotArgs),
    /// Density continuity test at the cutoff.
    Density(DensityArgs),
    /// Falsification battery.
    Falsify(FalsifyArgs),
    /// Monte Carlo experiment on a simulated design.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
    Csv,
    Svg,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Score (running variable) column.
    #[arg(long)]
    score: String,
    /// Outcome column.
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    cutoff: f64,
    /// Covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    covs: Vec<String>,
    /// Cluster label column.
    #[arg(long)]
    cluster: Option<String>,
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Output directory (JSON is always written there when set).
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value option file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long, default_value = "triangular")]
    kernel: Kernel,
    #[arg(long, default_value = "nn")]
    vce: Vce,
    /// Nearest-neighbor matches for the nn variance estimator.
    #[arg(long, default_value_t = 3)]
    nnmatch: usize,
    #[arg(long)]
    bwselect: Option<Selector>,
    /// Main bandwidth: one value, or `left,right`.
    #[arg(long, value_delimiter = ',')]
    h: Option<Vec<f64>>,
    /// Bias bandwidth: one value, or `left,right`.
    #[arg(long, value_delimiter = ',')]
    b: Option<Vec<f64>>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = 95.0)]
    level: f64,
    #[arg(long, default_value_t = 1.0)]
    scaleregul: f64,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Also report the bias-corrected row.
    #[arg(long)]
    all: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct BwselectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Report all ten selectors.
    #[arg(long)]
    all: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[command(flatten)]
    data: DataArgs,
    /// es, qs, esmv or qsmv.
    #[arg(long, default_value = "esmv")]
    binselect: String,
    /// Manual bin counts: one value, or `left,right`.
    #[arg(long, value_delimiter = ',')]
    nbins: Option<Vec<usize>>,
    #[arg(long, default_value_t = 4)]
    order: usize,
    #[arg(long, default_value = "uniform")]
    kernel: Kernel,
    /// Fit window: one value, or `left,right`.
    #[arg(long, value_delimiter = ',')]
    h: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Bin support `lo,hi`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    support: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100)]
    curve_points: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct DensityArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long, default_value = "triangular")]
    kernel: Kernel,
    #[arg(long, value_delimiter = ',')]
    h: Option<Vec<f64>>,
    #[arg(long, default_value_t = 95.0)]
    level: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FalsifyMode {
    Balance,
    Binomial,
    Density,
    Placebo,
    Donut,
    Sensitivity,
    All,
}

#[derive(Debug, Args)]
struct FalsifyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value_t = FalsifyMode::All)]
    mode: FalsifyMode,
    /// Half-width of the binomial test window.
    #[arg(long)]
    window: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    prob: f64,
    /// Placebo cutoffs, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    cutoffs: Vec<f64>,
    /// Donut radii, comma separated.
    #[arg(long, value_delimiter = ',')]
    radii: Vec<f64>,
    /// Sensitivity bandwidths; the CER/MSE grid when omitted.
    #[arg(long, value_delimiter = ',')]
    bandwidths: Vec<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Built-in design: linear, curved or manipulated.
    #[arg(long, default_value = "curved")]
    preset: String,
    /// JSON design specification (overrides --preset).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Run the density test instead of the estimator.
    #[arg(long)]
    density: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    output: OutputArgs,
}

enum Failure {
    Usage(String),
    Rd(RdError),
}

impl From<RdError> for Failure {
    fn from(e: RdError) -> Self {
        Failure::Rd(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Run the command line `args` (including the program name) and return the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(f) => return report(f),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> i32 {
    match f {
        Failure::Usage(msg) => {
            eprintln!("error: {msg}");
            2
        }
        Failure::Rd(e) => {
            let record = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            println!("{record}");
            eprintln!("error: {e}");
            1
        }
    }
}

/// Splice `key=value` lines from a `--config` file in as flags right after
/// the subcommand, so later command-line flags override them.
fn expand_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let pos = args.iter().position(|a| a == "--config" || a.to_string_lossy().starts_with("--config="));
    let Some(pos) = pos else { return Ok(args) };
    let path = match args[pos].to_string_lossy().strip_prefix("--config=") {
        Some(p) => PathBuf::from(p),
        None => match args.get(pos + 1) {
            Some(p) => PathBuf::from(p),
            None => return Err(Failure::Usage("--config needs a file path".into())),
        },
    };
    let text = fs::read_to_string(&path).map_err(|source| RdError::Io { path: path.clone(), source })?;
    let mut extra = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Failure::Usage(format!("{}:{}: expected key=value", path.display(), lineno + 1)));
        };
        let (key, value) = (key.trim(), value.trim());
        if key == "config" {
            return Err(Failure::Usage("config files cannot include other config files".into()));
        }
        match value {
            "true" => extra.push(OsString::from(format!("--{key}"))),
            "false" => {}
            v => {
                extra.push(OsString::from(format!("--{key}")));
                extra.push(OsString::from(v));
            }
        }
    }
    if args.len() < 2 {
        return Ok(args);
    }
    let mut out = args[..2].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}

fn pair<T: Copy>(v: &[T], name: &str) -> CliResult<(T, T)> {
    match v {
        [a] => Ok((*a, *a)),
        [a, b] => Ok((*a, *b)),
        _ => Err(Failure::Usage(format!("--{name} takes one value or `left,right`"))),
    }
}

fn load(data: &DataArgs, need_outcome: bool) -> CliResult<(RdData, String)> {
    let outcome = match (&data.outcome, need_outcome) {
        (Some(o), _) => o.clone(),
        (None, false) => data.score.clone(),
        (None, true) => return Err(Failure::Usage("--outcome is required".into())),
    };
    let mut map = ColumnMap::new(&data.score, outcome).covariates(data.covs.iter());
    if let Some(c) = &data.cluster {
        map = map.cluster(c);
    }
    let loaded = load_csv(&data.data, &map, data.cutoff)?;
    if loaded.dropped_rows > 0 {
        log::warn!("dropped {} rows with missing values", loaded.dropped_rows);
    }
    let digest = output::file_digest(&data.data)?;
    Ok((loaded.data, digest))
}

fn data_json(d: &DataArgs) -> serde_json::Value {
    json!({
        "data": d.data,
        "score": d.score,
        "outcome": d.outcome,
        "cutoff": d.cutoff,
        "covs": d.covs,
        "cluster": d.cluster,
    })
}

fn estimation_config(m: &ModelArgs, data: &DataArgs) -> CliResult<EstimationConfig> {
    if m.h.is_some() && m.bwselect.is_some() {
        return Err(Failure::Usage("conflicting bandwidth specification: --h cannot be combined with --bwselect".into()));
    }
    if m.b.is_some() && m.h.is_none() {
        return Err(Failure::Usage("--b requires --h".into()));
    }
    let bandwidth = match &m.h {
        Some(h) => BandwidthSpec::Manual { h: pair(h, "h")?, b: m.b.as_deref().map(|b| pair(b, "b")).transpose()? },
        None => BandwidthSpec::Select(m.bwselect.unwrap_or(Selector::Mserd)),
    };
    let config = EstimationConfig {
        p: m.p,
        q: m.q,
        kernel: m.kernel,
        vce: m.vce.with_matches(m.nnmatch),
        bandwidth,
        scaleregul: m.scaleregul,
        level: m.level,
        rho: m.rho,
        covariates: !data.covs.is_empty(),
        cluster: data.cluster.is_some(),
    };
    config.validate()?;
    Ok(config)
}

fn out_dir(o: &OutputArgs) -> Option<PathBuf> {
    o.out.clone().or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
}

fn write_file(dir: &Path, name: &str, text: &str) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| RdError::Io { path: dir.to_path_buf(), source })?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|source| RdError::Io { path, source })?;
    Ok(())
}

/// Print the requested rendering and, with an output directory, also write
/// the JSON envelope and that rendering to files.
fn emit<T: Serialize>(
    sub: &str,
    output: &OutputArgs,
    envelope: &Envelope<T>,
    alternative: impl FnOnce(Format) -> CliResult<String>,
) -> CliResult<()> {
    let json = output::to_json(envelope)?;
    let text = match output.format {
        Format::Json => json.clone(),
        f => alternative(f)?,
    };
    if let Some(dir) = out_dir(output) {
        write_file(&dir, &format!("{sub}.json"), &json)?;
        let ext = match output.format {
            Format::Json => None,
            Format::Table => Some("txt"),
            Format::Csv => Some("csv"),
            Format::Svg => Some("svg"),
        };
        if let Some(ext) = ext {
            write_file(&dir, &format!("{sub}.{ext}"), &text)?;
        }
    }
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(text.as_bytes());
    Ok(())
}

fn unsupported(sub: &str, f: Format) -> Failure {
    Failure::Usage(format!("`{sub}` cannot render --format {}", format!("{f:?}").to_lowercase()))
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Bwselect(a) => bwselect(a),
        Command::Plot(a) => plot(a),
        Command::Density(a) => density(a),
        Command::Falsify(a) => falsify(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn estimate(a: EstimateArgs) -> CliResult<()> {
    let config = estimation_config(&a.model, &a.data)?;
    let (data, digest) = load(&a.data, true)?;
    let est = analyze(&data, &config)?;
    let manifest = RunManifest::new(
        "estimate",
        json!({ "input": data_json(&a.data), "estimation": config, "all": a.all }),
        Some(digest),
        None,
    );
    let env = Envelope { manifest, result: est };
    emit("estimate", &a.output, &env, |f| match f {
        Format::Table => Ok(output::estimate_table(&env.result, a.all)),
        f => Err(unsupported("estimate", f)),
    })
}

fn bwselect(a: BwselectArgs) -> CliResult<()> {
    if a.model.h.is_some() {
        return Err(Failure::Usage("bwselect does not take --h".into()));
    }
    let config = estimation_config(&a.model, &a.data)?;
    let (data, digest) = load(&a.data, true)?;
    let results = if a.all {
        select_all(&data, &config)?
    } else {
        vec![select_with(&data, &config, a.model.bwselect.unwrap_or(Selector::Mserd))?]
    };
    let manifest = RunManifest::new(
        "bwselect",
        json!({ "input": data_json(&a.data), "estimation": config, "all": a.all }),
        Some(digest),
        None,
    );
    let env = Envelope { manifest, result: results };
    emit("bwselect", &a.output, &env, |f| match f {
        Format::Table => Ok(output::bandwidth_table(&env.result)),
        f => Err(unsupported("bwselect", f)),
    })
}

fn plot(a: PlotArgs) -> CliResult<()> {
    let (scheme, criterion) = parse_binselect(&a.binselect).map_err(|e| Failure::Usage(e.to_string()))?;
    let bins = match &a.nbins {
        Some(n) => {
            let (l, r) = pair(n, "nbins")?;
            BinChoice::Manual(l, r)
        }
        None => BinChoice::Select(criterion),
    };
    let support = match a.support.as_deref() {
        None => None,
        Some([lo, hi]) => Some((*lo, *hi)),
        Some(_) => return Err(Failure::Usage("--support takes `lo,hi`".into())),
    };
    let options = PlotOptions {
        scheme,
        bins,
        order: a.order,
        kernel: a.kernel,
        window: a.h.as_deref().map(|h| pair(h, "h")).transpose()?,
        scale: a.scale,
        support,
        curve_points: a.curve_points,
    };
    let (data, digest) = load(&a.data, true)?;
    let plot = rdplot::build_plot(&data, &options)?;
    let manifest = RunManifest::new(
        "plot",
        json!({ "input": data_json(&a.data), "plot": options }),
        Some(digest),
        None,
    );
    let env = Envelope { manifest, result: plot };
    emit("plot", &a.output, &env, |f| match f {
        Format::Csv => Ok(rdplot::render(&env.result, PlotFormat::Csv)?),
        Format::Svg => Ok(rdplot::render(&env.result, PlotFormat::Svg)?),
        Format::Table => Ok(plot_table(&env.result)),
        Format::Json => unreachable!("json handled by emit"),
    })
}

fn plot_table(p: &rdplot::RdPlotData) -> String {
    rdplot::render(p, PlotFormat::Csv)
        .map(|csv| csv.lines().filter(|l| l.starts_with("bin") || l.starts_with("kind")).collect::<Vec<_>>().join("\n") + "\n")
        .unwrap_or_default()
}

fn density(a: DensityArgs) -> CliResult<()> {
    let config = DensityConfig {
        order: a.order,
        kernel: a.kernel,
        h: a.h.as_deref().map(|h| pair(h, "h")).transpose()?,
        level: a.level,
        ..DensityConfig::default()
    };
    let (data, digest) = load(&a.data, false)?;
    let result = density_test(&data, &config)?;
    let manifest = RunManifest::new(
        "density",
        json!({ "input": data_json(&a.data), "density": config }),
        Some(digest),
        None,
    );
    let env = Envelope { manifest, result };
    emit("density", &a.output, &env, |f| match f {
        Format::Table => Ok(output::density_table(&env.result)),
        f => Err(unsupported("density", f)),
    })
}

fn falsify(a: FalsifyArgs) -> CliResult<()> {
    let mut config = estimation_config(&a.model, &a.data)?;
    // covariates are outcomes in the balance tests, not adjustment variables
    config.covariates = false;
    let need = |m: FalsifyMode| a.mode == m || a.mode == FalsifyMode::All;
    let explicit = |m: FalsifyMode| a.mode == m;
    if explicit(FalsifyMode::Binomial) && a.window.is_none() {
        return Err(Failure::Usage("binomial mode needs --window".into()));
    }
    if explicit(FalsifyMode::Placebo) && a.cutoffs.is_empty() {
        return Err(Failure::Usage("placebo mode needs --cutoffs".into()));
    }
    if explicit(FalsifyMode::Donut) && a.radii.is_empty() {
        return Err(Failure::Usage("donut mode needs --radii".into()));
    }
    if explicit(FalsifyMode::Balance) && a.data.covs.is_empty() {
        return Err(Failure::Usage("balance mode needs --covs".into()));
    }
    let (data, digest) = load(&a.data, true)?;
    let mut reports: Vec<FalsificationReport> = Vec::new();
    if need(FalsifyMode::Balance) && !a.data.covs.is_empty() {
        reports.push(covariate_balance_all(&data, &config)?);
    }
    if need(FalsifyMode::Density) {
        reports.push(density_report(&data, &DensityConfig::default())?);
    }
    if let (true, Some(w)) = (need(FalsifyMode::Binomial), a.window) {
        reports.push(binomial_report(&data, w, a.prob)?);
    }
    if need(FalsifyMode::Placebo) && !a.cutoffs.is_empty() {
        reports.push(placebo_cutoffs(&data, &a.cutoffs, &config)?);
    }
    if need(FalsifyMode::Donut) && !a.radii.is_empty() {
        reports.push(donut(&data, &a.radii, &config)?);
    }
    if need(FalsifyMode::Sensitivity) {
        let grid = (!a.bandwidths.is_empty()).then_some(a.bandwidths.as_slice());
        reports.push(bandwidth_sensitivity(&data, grid, &config)?);
    }
    let manifest = RunManifest::new(
        "falsify",
        json!({
            "input": data_json(&a.data),
            "estimation": config,
            "mode": a.mode,
            "window": a.window,
            "prob": a.prob,
            "cutoffs": a.cutoffs,
            "radii": a.radii,
            "bandwidths": a.bandwidths,
        }),
        Some(digest),
        None,
    );
    let env = Envelope { manifest, result: reports };
    emit("falsify", &a.output, &env, |f| match f {
        Format::Table => Ok(env
            .result
            .iter()
            .map(|r| format!("{}\n{}", r.kind, output::falsification_table(r)))
            .collect::<Vec<_>>()
            .join("\n")),
        f => Err(unsupported("falsify", f)),
    })
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| RdError::Io { path: path.clone(), source })?;
            serde_json::from_str::<DgpSpec>(&text).map_err(|e| RdError::InvalidInput(format!("design spec: {e}")))?
        }
        None => DgpSpec::preset(&a.preset).map_err(|e| Failure::Usage(e.to_string()))?,
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let seed = Some(spec.seed);
    if a.density {
        let config = DensityConfig::default();
        let summary = run_density_experiment(&spec, a.n, a.reps, &config, a.alpha)?;
        let manifest = RunManifest::new(
            "simulate",
            json!({ "spec": spec, "n": a.n, "reps": a.reps, "density": config, "alpha": a.alpha }),
            None,
            seed,
        );
        let env = Envelope { manifest, result: summary };
        return emit("simulate", &a.output, &env, |f| match f {
            Format::Table => Ok(output::density_experiment_table(&env.result)),
            f => Err(unsupported("simulate", f)),
        });
    }
    let no_data = DataArgs {
        data: PathBuf::new(),
        score: String::new(),
        outcome: None,
        cutoff: spec.cutoff,
        covs: Vec::new(),
        cluster: None,
    };
    let mut config = estimation_config(&a.model, &no_data)?;
    config.cluster = spec.clusters.is_some();
    let summary = run_experiment(&spec, a.n, a.reps, &config)?;
    let manifest = RunManifest::new(
        "simulate",
        json!({ "spec": spec, "n": a.n, "reps": a.reps, "estimation": config }),
        None,
        seed,
    );
    let env = Envelope { manifest, result: summary };
    emit("simulate", &a.output, &env, |f| match f {
        Format::Table => Ok(output::experiment_table(&env.result)),
        f => Err(unsupported("simulate", f)),
    })
}
