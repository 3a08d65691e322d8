//! `blfuse`: fuse Gaussian estimates, simulate factor markets, compute
//! cost-aware portfolio weights, run Bayesian allocation backtests, and
//! report pairwise significance tables.
//!
//! Exit codes: 0 success, 2 invalid input, 3 a numerical method failed on
//! valid input. All randomness flows from explicit seeds; output files are
//! written atomically.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use blfuse_core::backtest::{self, BacktestConfig};
use blfuse_core::blapt::{FactorModel, FuseMethod, Prior, SourceViews};
use blfuse_core::error::{Error, ErrorCategory, Result};
use blfuse_core::fusion::{self, CuOptions};
use blfuse_core::gaussian::{concentration_ellipse, GaussianEstimate};
use blfuse_core::market::{self, MarketConfig};
use blfuse_core::metrics;
use blfuse_core::portfolio::{self, CostModel};
use blfuse_core::seeding;
use blfuse_core::fsio;

#[derive(Parser)]
#[command(
    name = "blfuse",
    version,
    about = "Multi-source information fusion and Bayesian factor-model portfolio allocation"
)]
struct Cli {
    /// Seed override for commands that consume randomness
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON config file (command-specific schema)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file or directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse a list of Gaussian estimates into one
    Fuse {
        /// Fusion rule: pw | ci | ici | cu
        #[arg(long)]
        method: String,
        /// JSON file holding a list of {"mean": [..], "cov": [[..]]} objects
        #[arg(long = "in")]
        input: PathBuf,
        /// Optional CSV of concentration ellipses (2D inputs only)
        #[arg(long)]
        ellipse: Option<PathBuf>,
    },
    /// Generate a synthetic factor market into a directory of CSVs
    Simulate,
    /// Closed-form mean-variance weights with optional transaction costs
    Weights {
        /// CSV with one expected-return value per line (no header)
        #[arg(long)]
        mean: PathBuf,
        /// CSV with the covariance matrix, one row per line (no header)
        #[arg(long)]
        cov: PathBuf,
        /// JSON cost model; omitted = frictionless
        #[arg(long)]
        cost: Option<PathBuf>,
        /// CSV with previous weights, one per line (no header); omitted = flat
        #[arg(long)]
        prev: Option<PathBuf>,
        /// Risk-aversion coefficient
        #[arg(long, default_value_t = 10.0)]
        gamma: f64,
    },
    /// Run the full allocation chain: prior + per-source views -> weights
    Allocate {
        /// Fusion rule: pw | ci | ici | cu | single:<index>
        #[arg(long, default_value = "pw")]
        method: String,
        /// Risk-aversion coefficient
        #[arg(long, default_value_t = 10.0)]
        gamma: f64,
    },
    /// Backtest fusion methods over a saved or inline market
    Backtest {
        /// Directory produced by `simulate`; overrides the config's market
        #[arg(long)]
        market: Option<PathBuf>,
    },
    /// Reporting utilities over backtest outputs
    Report {
        #[command(subcommand)]
        cmd: ReportCommand,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Pairwise significance battery over per-year Sharpe rows
    Stats {
        /// metrics_by_year.csv produced by `backtest`
        #[arg(long = "in")]
        input: PathBuf,
        /// Confidence level for the bootstrap intervals / flag threshold
        #[arg(long, default_value_t = 0.9)]
        level: f64,
        /// Bootstrap replicates (minimum 1000)
        #[arg(long = "n-boot", default_value_t = 2000)]
        n_boot: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e.category() {
                ErrorCategory::Validation => 2,
                ErrorCategory::Solver => 3,
            };
            std::process::exit(code);
        }
    }
}

/// Cap rayon's global pool when BLFUSE_THREADS is set.
fn configure_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("BLFUSE_THREADS") {
        let n: usize = raw.parse().map_err(|_| {
            Error::InvalidArgument(format!("BLFUSE_THREADS must be a positive integer, got {raw:?}"))
        })?;
        if n == 0 {
            return Err(Error::InvalidArgument(
                "BLFUSE_THREADS must be a positive integer, got 0".into(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fuse {
            method,
            input,
            ellipse,
        } => cmd_fuse(&method, &input, cli.config.as_deref(), &required(cli.out, "--out")?, ellipse.as_deref()),
        Command::Simulate => cmd_simulate(
            &required(cli.config, "--config")?,
            &required(cli.out, "--out")?,
            cli.seed,
        ),
        Command::Weights {
            mean,
            cov,
            cost,
            prev,
            gamma,
        } => cmd_weights(
            &mean,
            &cov,
            cost.as_deref(),
            prev.as_deref(),
            gamma,
            &required(cli.out, "--out")?,
        ),
        Command::Allocate { method, gamma } => cmd_allocate(
            &required(cli.config, "--config")?,
            &method,
            gamma,
            &required(cli.out, "--out")?,
        ),
        Command::Backtest { market } => cmd_backtest(
            market.as_deref(),
            &required(cli.config, "--config")?,
            &required(cli.out, "--out")?,
            cli.seed,
        ),
        Command::Report { cmd } => match cmd {
            ReportCommand::Stats {
                input,
                level,
                n_boot,
            } => cmd_report_stats(
                &input,
                &required(cli.out, "--out")?,
                level,
                n_boot,
                cli.seed.unwrap_or(0),
            ),
        },
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidArgument(format!("{flag} is required for this command")))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(Error::from)
}

// ---- fuse ----

/// Optional --config schema for `fuse`: solver options only.
#[derive(Deserialize, Default)]
#[serde(default)]
struct FuseOptions {
    cu: CuOptions,
}

fn cmd_fuse(
    method: &str,
    input: &Path,
    config: Option<&Path>,
    out: &Path,
    ellipse: Option<&Path>,
) -> Result<()> {
    let method = FuseMethod::from_str(method)?;
    let opts: FuseOptions = match config {
        Some(p) => read_json(p)?,
        None => FuseOptions::default(),
    };
    let estimates: Vec<GaussianEstimate> = read_json(input)?;
    let fused = match method {
        FuseMethod::Pw => fusion::fuse_pw(&estimates)?,
        FuseMethod::Ci => {
            let (fused, weights) = fusion::fuse_ci(&estimates)?;
            eprintln!("ci weights: {:?}", weights.omegas());
            fused
        }
        FuseMethod::Ici => {
            let fused = fusion::fuse_ici(&estimates)?;
            eprintln!("ici fold order: {:?}", fused.order);
            fused.estimate
        }
        FuseMethod::Cu => {
            let sol = fusion::fuse_cu(&estimates, &opts.cu)?;
            eprintln!(
                "cu objective: {:.6e}, constraint slack: {:.3e}",
                sol.objective, sol.constraint_slack
            );
            sol.estimate
        }
        FuseMethod::Single(_) => {
            return Err(Error::InvalidArgument(
                "fuse accepts pw | ci | ici | cu (single:<i> is a backtest method tag)".into(),
            ));
        }
    };
    let json = serde_json::to_string_pretty(&fused)?;
    fsio::atomic_write_bytes(out, json.as_bytes())?;

    if let Some(ellipse_path) = ellipse {
        write_ellipse_csv(ellipse_path, &estimates, &fused)?;
    }
    Ok(())
}

/// Concentration-ellipse boundary points for each source and the fused
/// estimate, as `source_id,x,y` rows (2D only).
fn write_ellipse_csv(path: &Path, sources: &[GaussianEstimate], fused: &GaussianEstimate) -> Result<()> {
    const POINTS: usize = 64;
    fsio::atomic_csv(path, |writer| {
        writer.write_record(["source_id", "x", "y"])?;
        let mut emit = |id: &str, e: &GaussianEstimate| -> Result<()> {
            for p in concentration_ellipse(e, POINTS)? {
                writer.write_record([id, &format!("{:.12e}", p[0]), &format!("{:.12e}", p[1])])?;
            }
            Ok(())
        };
        for (i, e) in sources.iter().enumerate() {
            emit(&i.to_string(), e)?;
        }
        emit("fused", fused)
    })
}

// ---- simulate ----

fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: MarketConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let path = market::generate(&cfg)?;
    market::save(&path, out)?;
    eprintln!(
        "wrote market ({} assets, {} factors, {} periods) to {}",
        cfg.n_assets,
        cfg.n_factors,
        cfg.horizon,
        out.display()
    );
    Ok(())
}

// ---- weights ----

fn read_column_csv(path: &Path) -> Result<DVector<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        values.push(line.parse::<f64>().map_err(|e| Error::Schema {
            path: path.display().to_string(),
            row: i + 1,
            message: e.to_string(),
        })?);
    }
    if values.is_empty() {
        return Err(Error::Schema {
            path: path.display().to_string(),
            row: 1,
            message: "no values".into(),
        });
    }
    Ok(DVector::from_vec(values))
}

fn read_square_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Schema {
                path: path.display().to_string(),
                row: i + 1,
                message: e.to_string(),
            })?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Schema {
            path: path.display().to_string(),
            row: 1,
            message: format!("expected a square matrix, got {n} rows"),
        });
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(n, n, &flat))
}

fn write_weights_csv(path: &Path, w: &DVector<f64>) -> Result<()> {
    fsio::atomic_csv(path, |writer| {
        writer.write_record(["asset", "weight"])?;
        for (i, x) in w.iter().enumerate() {
            writer.write_record([i.to_string(), format!("{x:.17e}")])?;
        }
        Ok(())
    })
}

fn cmd_weights(
    mean: &Path,
    cov: &Path,
    cost: Option<&Path>,
    prev: Option<&Path>,
    gamma: f64,
    out: &Path,
) -> Result<()> {
    let mu = read_column_csv(mean)?;
    let sigma = read_square_csv(cov)?;
    let n = mu.len();
    let cost_model = match cost {
        Some(p) => read_json::<CostModel>(p)?,
        None => CostModel::frictionless(n),
    };
    let w_prev = match prev {
        Some(p) => read_column_csv(p)?,
        None => DVector::zeros(n),
    };
    let w = portfolio::optimal_weights_tc(&mu, &sigma, gamma, &cost_model, &w_prev)?;
    write_weights_csv(out, &w)
}

// ---- allocate ----

/// --config schema for `allocate`.
#[derive(Deserialize)]
struct AllocateProblem {
    model: FactorModel,
    prior: Prior,
    sources: Vec<SourceViews>,
    #[serde(default)]
    cu: CuOptions,
}

fn cmd_allocate(config: &Path, method: &str, gamma: f64, out: &Path) -> Result<()> {
    let problem: AllocateProblem = read_json(config)?;
    let method = FuseMethod::from_str(method)?;
    let (fused, weights) = blfuse_core::blapt::bl_pipeline_with(
        &problem.prior,
        &problem.sources,
        &problem.model,
        method,
        gamma,
        &problem.cu,
    )?;
    eprintln!(
        "fused factor estimate mean: {:?}",
        fused.mean().iter().copied().collect::<Vec<_>>()
    );
    write_weights_csv(out, &weights)
}

// ---- backtest ----

/// --config schema for `backtest`: a market (inline or directory), the
/// backtest parameters, and significance options.
#[derive(Deserialize)]
struct RunConfig {
    /// Inline market to generate in-process (ignored when --market or
    /// market_dir points at a saved one).
    #[serde(default)]
    market: Option<MarketConfig>,
    /// Directory produced by `simulate`.
    #[serde(default)]
    market_dir: Option<PathBuf>,
    backtest: BacktestConfig,
    #[serde(default)]
    significance: SignificanceOptions,
}

#[derive(Deserialize)]
#[serde(default)]
struct SignificanceOptions {
    level: f64,
    n_boot: usize,
}

impl Default for SignificanceOptions {
    fn default() -> Self {
        Self {
            level: 0.9,
            n_boot: 2000,
        }
    }
}

fn cmd_backtest(
    market_flag: Option<&Path>,
    config: &Path,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let run_cfg: RunConfig = read_json(config)?;
    let mut bt_cfg = run_cfg.backtest;
    if let Some(s) = seed {
        bt_cfg.seed = s;
    }

    let market_path = if let Some(dir) = market_flag {
        market::load(dir)?
    } else if let Some(dir) = &run_cfg.market_dir {
        market::load(dir)?
    } else if let Some(cfg) = &run_cfg.market {
        market::generate(cfg)?
    } else {
        return Err(Error::InvalidArgument(
            "no market given: pass --market <dir> or set `market` / `market_dir` in the config"
                .into(),
        ));
    };

    let report = backtest::run(&market_path, &bt_cfg)?;
    for (tag, message) in &report.failures {
        eprintln!("method {tag} failed: {message}");
    }
    if report.runs.is_empty() {
        return Err(Error::NonConvergence {
            context: "backtest: every method failed",
            iterations: 0,
            best: f64::NAN,
        });
    }

    std::fs::create_dir_all(out)?;
    backtest::write_metrics_csv(&out.join("metrics_by_year.csv"), &report.metrics)?;
    backtest::write_equity_csv(&out.join("equity_curves.csv"), &report)?;

    let sig_seed = seeding::child_seed(bt_cfg.seed, "significance");
    write_significance(
        &out.join("significance.csv"),
        &report.sharpe_by_year(),
        run_cfg.significance.level,
        run_cfg.significance.n_boot,
        sig_seed,
    )?;
    eprintln!(
        "wrote report ({} methods, {} held periods) to {}",
        report.runs.len(),
        report.benchmark.len(),
        out.display()
    );
    Ok(())
}

/// Run the significance battery; when it cannot run (one method, too few
/// years) write a header-only table and explain on stderr rather than fail
/// the whole report.
fn write_significance(
    path: &Path,
    per_method: &[(String, std::collections::BTreeMap<i64, f64>)],
    level: f64,
    n_boot: usize,
    seed: u64,
) -> Result<()> {
    match metrics::significance_table(per_method, level, n_boot, seed) {
        Ok(table) => {
            for note in &table.notes {
                eprintln!("significance: {note}");
            }
            metrics::write_significance_csv(path, &table)
        }
        Err(e @ (Error::InsufficientData { .. } | Error::InvalidArgument(_))) => {
            eprintln!("significance table skipped: {e}");
            metrics::write_significance_csv(
                path,
                &metrics::SignificanceTable {
                    rows: vec![],
                    notes: vec![],
                },
            )
        }
        Err(e) => Err(e),
    }
}

// ---- report stats ----

fn cmd_report_stats(
    input: &Path,
    out: &Path,
    level: f64,
    n_boot: usize,
    seed: u64,
) -> Result<()> {
    let rows = backtest::read_metrics_csv(input)?;
    let per_method = backtest::sharpe_by_year_from_rows(&rows);
    let table = metrics::significance_table(
        &per_method,
        level,
        n_boot,
        seeding::child_seed(seed, "significance"),
    )?;
    for note in &table.notes {
        eprintln!("significance: {note}");
    }
    metrics::write_significance_csv(out, &table)
}
