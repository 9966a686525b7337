//! The `frgp` command line: fit, scan, bench and diag.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
//! Every command writes `manifest.json` listing each artifact with its SHA-256.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::grid_points;
use crate::diagnostics::{
    bivariate_normal_rectangle, eigen_formula_check, plateau_ratio, schur_identity_check, small_ball_mc,
    small_ball_trend, un_condition_check, SmallBallNorm,
};
use crate::error::{Error, Result};
use crate::experiments::{
    configure_threads, fit_model, preset, preset_names, run_replications, scan_replication, summarize_timing,
    timing_benchmark, write_csv, ExperimentConfig, FittedModel, Method,
};
use crate::inference::{Dataset, DEFAULT_LEVELS};
use crate::plot::{BoxPlot, LinePlot, Series};
use crate::seeding::{derive_seed, CHAIN_STREAM};
use crate::spde::precision;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "frgp", version, about = "Finite-rank GP regression on hat-function bases")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the sampler on simulated (or supplied) data and write the posterior predictive.
    Fit(FitArgs),
    /// Normalize p(N, kappa | D) over the configured grid.
    Scan(RunArgs),
    /// Replicated AMSE study, plus timings when the config has a timing section.
    Bench(RunArgs),
    /// Numerical self-checks with a pass/fail report.
    Diag(DiagArgs),
    /// List preset names.
    Presets,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON experiment config.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named config (see `frgp presets`).
    #[arg(long)]
    pub preset: Option<String>,
    /// Overrides the seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// 50 replications and K = 1000 instead of the desk defaults.
    #[arg(long)]
    pub full_scale: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// CSV with columns `x,y` (or `x1,x2,y`); simulated from the config when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Un,
    Eigen,
    Schur,
    SmallBall,
    All,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config_path: Option<String>,
    pub preset: Option<String>,
    pub config: Option<serde_json::Value>,
    pub seed: u64,
    pub out_dir: String,
    pub wall_seconds: f64,
    pub threads: usize,
    pub version: String,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects the files a command writes so the manifest can checksum them.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let p = self.path(name);
        write_csv(&p, rows)
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(p, body)?;
        Ok(())
    }

    fn finish(self, mut manifest: RunManifest) -> Result<RunManifest> {
        for f in &self.files {
            let bytes = fs::read(self.dir.join(f))?;
            manifest.artifacts.push(Artifact { path: f.clone(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        }
        fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    }
}

fn manifest(command: &str, run: Option<(&RunArgs, &ExperimentConfig)>, seed: u64, out: &Path, start: Instant) -> RunManifest {
    RunManifest {
        schema_version: 1,
        command: command.into(),
        config_path: run.and_then(|(a, _)| a.config.as_ref().map(|p| p.display().to_string())),
        preset: run.and_then(|(a, _)| a.preset.clone()),
        config: run.map(|(_, c)| serde_json::to_value(c).expect("config serializes")),
        seed,
        out_dir: out.display().to_string(),
        wall_seconds: start.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        version: env!("CARGO_PKG_VERSION").into(),
        artifacts: Vec::new(),
    }
}

/// Resolves `--config`/`--preset`, then applies `--seed` and `--full-scale`.
pub fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut c = match (&args.config, &args.preset) {
        (Some(p), None) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        (None, Some(name)) => preset(name)?,
        _ => return Err(Error::Config("give exactly one of --config or --preset".into())),
    };
    if let Some(s) = args.seed {
        c.seed = s;
    }
    if args.full_scale {
        c = c.full_scale();
    }
    c.validate()?;
    Ok(c)
}

/// Reads `x,y` or `x1,x2,y` columns.
pub fn read_data(path: &Path, dim: usize, sigma_sq: f64) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != dim + 1 {
            return Err(Error::Config(format!("data rows need {} columns, found {}", dim + 1, rec.len())));
        }
        let vals: Vec<f64> = rec
            .iter()
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad number '{v}': {e}"))))
            .collect::<Result<_>>()?;
        x.extend_from_slice(&vals[..dim]);
        y.push(vals[dim]);
    }
    Dataset::new(x, y, sigma_sq, dim).map_err(|e| Error::Config(e.to_string()))
}

fn axis_names(dim: usize) -> Vec<String> {
    if dim == 1 {
        vec!["x".into()]
    } else {
        (1..=dim).map(|i| format!("x{i}")).collect()
    }
}

#[derive(Serialize)]
struct ChainRow {
    iteration: usize,
    n_grid: usize,
    kappa: f64,
}

#[derive(Serialize)]
struct MixtureRow {
    kappa: f64,
    weight: f64,
}

fn cmd_fit(args: &FitArgs) -> Result<RunManifest> {
    let start = Instant::now();
    let c = resolve_config(&args.run)?;
    let data = match &args.data {
        Some(p) => read_data(p, c.dim(), c.sigma_sq)?,
        None => c.simulate(0)?,
    };
    let fit = fit_model(&c, &data, derive_seed(c.replication_seed(0), CHAIN_STREAM))?;
    let mut out = Output::new(&args.run.out)?;
    match &fit {
        FittedModel::Chain(chain) => {
            let rows: Vec<ChainRow> = chain
                .samples
                .iter()
                .enumerate()
                .map(|(i, s)| ChainRow { iteration: chain.burnin + i, n_grid: s.n_grid, kappa: s.kappa })
                .collect();
            out.csv("chain.csv", &rows)?;
        }
        FittedModel::Gp { fits, .. } => {
            let rows: Vec<MixtureRow> =
                fits.iter().map(|(f, w)| MixtureRow { kappa: f.kernel().spec.kappa, weight: *w }).collect();
            out.csv("chain.csv", &rows)?;
        }
    }
    let query = grid_points(c.amse_k(), c.dim());
    let pred = fit.predictive(&query, &DEFAULT_LEVELS, 4000, derive_seed(c.seed, 99))?;
    let p = out.path("predictive.csv");
    let mut w = csv::Writer::from_path(&p)?;
    let mut header = axis_names(c.dim());
    header.extend(["mean".into(), "q025".into(), "q975".into()]);
    w.write_record(&header)?;
    for (x, s) in query.chunks_exact(c.dim()).zip(&pred) {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        rec.push(s.mean.to_string());
        rec.extend(s.quantiles.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    out.finish(manifest("fit", Some((&args.run, &c)), c.seed, &args.run.out, start))
}

#[derive(Serialize)]
struct ScanRow {
    n_grid: usize,
    kappa: f64,
    log_posterior: f64,
    probability: f64,
}

#[derive(Serialize)]
struct NMarginal {
    n_grid: usize,
    probability: f64,
}

#[derive(Serialize)]
struct KappaMarginal {
    kappa: f64,
    probability: f64,
}

fn cmd_scan(args: &RunArgs) -> Result<RunManifest> {
    let start = Instant::now();
    let c = resolve_config(args)?;
    if c.method == Method::ExactGp {
        return Err(Error::Config("scan needs a finite-rank method (gpi or spde)".into()));
    }
    let s = scan_replication(&c, 0)?;
    let mut out = Output::new(&args.out)?;
    let nk = s.kappa_values.len();
    let rows: Vec<ScanRow> = (0..s.table.len())
        .map(|i| ScanRow {
            n_grid: s.n_values[i / nk],
            kappa: s.kappa_values[i % nk],
            log_posterior: s.log_table[i],
            probability: s.table[i],
        })
        .collect();
    out.csv("scan_table.csv", &rows)?;
    let pn: Vec<NMarginal> =
        s.n_values.iter().zip(&s.p_n).map(|(&n_grid, &probability)| NMarginal { n_grid, probability }).collect();
    out.csv("p_n.csv", &pn)?;
    let pk: Vec<KappaMarginal> =
        s.kappa_values.iter().zip(&s.p_kappa).map(|(&kappa, &probability)| KappaMarginal { kappa, probability }).collect();
    out.csv("p_kappa.csv", &pk)?;
    let title = format!("{} {} n={}", c.method.name(), c.function.name(), c.n);
    let svg = LinePlot::new(format!("p(N | D), {title}"), "N", "probability")
        .with_series(Series::new("p(N | D)", s.n_values.iter().zip(&s.p_n).map(|(&n, &p)| (n as f64, p)).collect()))
        .to_svg();
    out.text("p_n.svg", &svg)?;
    let svg = LinePlot::new(format!("p(kappa | D), {title}"), "kappa", "probability")
        .with_series(Series::new("p(kappa | D)", s.kappa_values.iter().copied().zip(s.p_kappa.iter().copied()).collect()))
        .to_svg();
    out.text("p_kappa.svg", &svg)?;
    out.finish(manifest("scan", Some((args, &c)), c.seed, &args.out, start))
}

#[derive(Serialize)]
struct WallRow {
    replication: usize,
    wall_seconds: f64,
}

fn cmd_bench(args: &RunArgs) -> Result<RunManifest> {
    let start = Instant::now();
    let c = resolve_config(args)?;
    let rows = run_replications(&c)?;
    let mut out = Output::new(&args.out)?;
    out.csv("replications.csv", &rows)?;
    let walls: Vec<WallRow> =
        rows.iter().map(|r| WallRow { replication: r.replication, wall_seconds: r.wall_seconds }).collect();
    out.csv("replication_times.csv", &walls)?;
    let amse: Vec<f64> = rows.iter().filter(|r| r.is_ok()).map(|r| r.amse).collect();
    let svg = BoxPlot::new(format!("AMSE, {} on {}", c.method.name(), c.function.name()), "AMSE")
        .log_y()
        .with_group(format!("n={}", c.n), amse.clone())
        .to_svg();
    out.text("amse.svg", &svg)?;
    if let Some(t) = &c.timing {
        let timing = timing_benchmark(&c)?;
        out.csv("timing.csv", &timing)?;
        let summary = summarize_timing(&timing);
        out.csv("timing_summary.csv", &summary)?;
        let mut plot = LinePlot::new("Time per posterior-sample batch", "n", "seconds").log_x().log_y();
        for m in &t.methods {
            let pts = summary.iter().filter(|s| s.method == *m).map(|s| (s.n as f64, s.median_seconds)).collect();
            plot = plot.with_series(Series::new(m.name(), pts));
        }
        out.text("timing.svg", &plot.to_svg())?;
    }
    let m = out.finish(manifest("bench", Some((args, &c)), c.seed, &args.out, start))?;
    if amse.is_empty() {
        let first = rows.first().map(|r| r.status.clone()).unwrap_or_default();
        return Err(Error::Conditioning(format!("every replication failed ({first})")));
    }
    Ok(m)
}

/// One line of a diagnostics report. `margin` is positive when the check passes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagCheck {
    pub suite: String,
    pub check: String,
    pub value: f64,
    pub threshold: f64,
    pub margin: f64,
    pub pass: bool,
}

impl DiagCheck {
    /// Passes when `value <= threshold`.
    fn at_most(suite: &str, check: String, value: f64, threshold: f64) -> Self {
        Self { suite: suite.into(), check, value, threshold, margin: threshold - value, pass: value <= threshold }
    }
}

pub fn diag_un() -> Result<Vec<DiagCheck>> {
    let mut out = Vec::new();
    let q = un_condition_check(|x| (x + 3.0).powi(2), 64, 8.0)?;
    out.push(DiagCheck::at_most("un", "(x+3)^2 ratio, M=64, K=8".into(), q.ratio, 8.0));
    let want = 1.0 / (8.0 * 64.0 * 64.0);
    let dev = q.m_values.iter().map(|m| (m - want).abs()).fold(0.0, f64::max);
    out.push(DiagCheck::at_most("un", "(x+3)^2 m_k vs 1/(8M^2)".into(), dev, 1e-8));
    let f2 = |x: f64| 128.0 * (0.5 - x).abs().powi(7) + x * x;
    let r = un_condition_check(f2, 64, 680.0)?;
    out.push(DiagCheck::at_most("un", "f2 ratio, M=64, K=680".into(), r.ratio, 680.0));
    Ok(out)
}

pub fn diag_eigen() -> Result<Vec<DiagCheck>> {
    let mut out = Vec::new();
    for n in [4usize, 8, 16, 32] {
        for kappa in [0.5, 1.0, 2.0] {
            let r = eigen_formula_check(n, kappa)?;
            out.push(DiagCheck::at_most(
                "eigen",
                format!("N={n} kappa={kappa}: 2+k^2/N^2-2cos(k pi/N)"),
                r.deviation_cos_k_pi_over_n,
                1e-10,
            ));
        }
    }
    Ok(out)
}

pub fn diag_schur() -> Result<Vec<DiagCheck>> {
    let mut out = Vec::new();
    for n in [4usize, 8, 16] {
        for kappa in [0.5, 1.0, 2.0] {
            for beta in [2u32, 4] {
                let r = schur_identity_check(n, kappa, beta)?;
                out.push(DiagCheck::at_most("schur", format!("N={n} kappa={kappa} beta={beta} cov"), r.cov_deviation, 1e-8));
                out.push(DiagCheck::at_most("schur", format!("N={n} kappa={kappa} beta={beta} mean"), r.mean_deviation, 1e-8));
            }
        }
    }
    Ok(out)
}

/// Grid sizes and radius of the small-ball trend.
pub const SMALL_BALL_NS: [usize; 8] = [1, 2, 4, 8, 16, 32, 64, 128];
pub const SMALL_BALL_EPS: f64 = 0.25;
pub const SMALL_BALL_DRAWS: usize = 100_000;
/// Draws for the N = 1 comparison against quadrature.
pub const SMALL_BALL_N1_DRAWS: usize = 1_000_000;
/// Largest last-to-first increment ratio accepted as levelling off.
pub const PLATEAU_RATIO: f64 = 0.25;

#[derive(Debug, Clone, Serialize)]
pub struct TrendRow {
    pub n_grid: usize,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub neg_log: f64,
}

pub fn diag_small_ball(seed: u64) -> Result<(Vec<DiagCheck>, Vec<TrendRow>)> {
    let mut out = Vec::new();
    let q = precision(1, 1.0, 2)?;
    let cov = q.cholesky()?.inverse_dense();
    let eps = 1.0;
    let exact = bivariate_normal_rectangle([[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]], [-eps, -eps], [eps, eps])?;
    let est = small_ball_mc(&q.into(), eps, SmallBallNorm::SupAtGrid, SMALL_BALL_N1_DRAWS, seed)?;
    let margin = (exact - est.ci_low).min(est.ci_high - exact);
    out.push(DiagCheck {
        suite: "small-ball".into(),
        check: format!("N=1 MC {:.5} [{:.5}, {:.5}] covers quadrature", est.estimate, est.ci_low, est.ci_high),
        value: exact,
        threshold: est.estimate,
        margin,
        pass: margin >= 0.0,
    });
    let trend = small_ball_trend(1.0, 2, SMALL_BALL_EPS, &SMALL_BALL_NS, SMALL_BALL_DRAWS, seed)?;
    let rows: Vec<TrendRow> = trend
        .iter()
        .map(|(n, e)| TrendRow { n_grid: *n, estimate: e.estimate, ci_low: e.ci_low, ci_high: e.ci_high, neg_log: e.neg_log() })
        .collect();
    let nl: Vec<f64> = rows.iter().map(|r| r.neg_log).collect();
    let rising = nl.last().copied().unwrap_or(f64::NAN) > nl[0];
    out.push(DiagCheck {
        suite: "small-ball".into(),
        check: "-log P rises from N=1 to N=128".into(),
        value: nl[nl.len() - 1] - nl[0],
        threshold: 0.0,
        margin: nl[nl.len() - 1] - nl[0],
        pass: rising,
    });
    out.push(DiagCheck::at_most(
        "small-ball",
        "plateau: last/first increment of -log P".into(),
        plateau_ratio(&nl),
        PLATEAU_RATIO,
    ));
    Ok((out, rows))
}

fn cmd_diag(args: &DiagArgs) -> Result<(RunManifest, bool)> {
    let start = Instant::now();
    let mut checks = Vec::new();
    let mut out = Output::new(&args.out)?;
    let all = args.suite == Suite::All;
    if all || args.suite == Suite::Un {
        checks.extend(diag_un()?);
    }
    if all || args.suite == Suite::Eigen {
        checks.extend(diag_eigen()?);
    }
    if all || args.suite == Suite::Schur {
        checks.extend(diag_schur()?);
    }
    if all || args.suite == Suite::SmallBall {
        let (c, rows) = diag_small_ball(args.seed)?;
        checks.extend(c);
        out.csv("small_ball_trend.csv", &rows)?;
        let svg = LinePlot::new(format!("-log P(sup |f_N| < {SMALL_BALL_EPS}), beta=2, kappa=1"), "N", "-log P")
            .log_x()
            .with_series(Series::new("Monte Carlo", rows.iter().map(|r| (r.n_grid as f64, r.neg_log)).collect()))
            .to_svg();
        out.text("small_ball_trend.svg", &svg)?;
    }
    out.csv("report.csv", &checks)?;
    let ok = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!("{} {} {}: value {:e}, margin {:e}", if c.pass { "PASS" } else { "FAIL" }, c.suite, c.check, c.value, c.margin);
    }
    Ok((out.finish(manifest("diag", None, args.seed, &args.out, start))?, ok))
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a).map(|_| EXIT_OK),
        Command::Scan(a) => cmd_scan(a).map(|_| EXIT_OK),
        Command::Bench(a) => cmd_bench(a).map(|_| EXIT_OK),
        Command::Diag(a) => cmd_diag(a).map(|(_, ok)| if ok { EXIT_OK } else { EXIT_NUMERICAL }),
        Command::Presets => {
            for n in preset_names() {
                println!("{n}");
            }
            Ok(EXIT_OK)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["frgp", "diag", "--suite", "nope", "--out", "/tmp/x"]), EXIT_USAGE);
        assert_eq!(run(["frgp", "fit", "--out", "/tmp/x"]), EXIT_USAGE);
        assert_eq!(run(["frgp", "bench", "--preset", "no-such", "--out", "/tmp/x"]), EXIT_USAGE);
    }
}
