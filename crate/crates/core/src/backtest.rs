//! Rolling rebalance harness: per rebalance date, estimate factor returns
//! cross-sectionally, generate autoregressive views per source, run the
//! Bayesian allocation chain per fusion method, allocate with transaction
//! costs, and realize net returns. Produces per-year performance rows and
//! equity curves.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blapt::{self, FactorModel, FuseMethod, Prior, SourceViews, ViewSet};
use crate::error::{Error, Result};
use crate::fusion::CuOptions;
use crate::market::{self, MarketPath};
use crate::metrics;
use crate::portfolio::{self, CostModel};
use crate::views;

/// Backtest parameters. Every field except `seed` defaults to the reference
/// configuration: bi-monthly periods (6 per year), rebalancing every period,
/// risk aversion 10, a 20-observation prior window, a 40-observation view-fit
/// window, and a 20-observation trailing window for out-of-sample forecast
/// errors. `seed` must be given explicitly — no silent or wall-clock seeding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::prior_window")]
    pub prior_window: usize,
    #[serde(default = "defaults::one")]
    pub rebalance_every: usize,
    #[serde(default = "defaults::periods_per_year")]
    pub periods_per_year: usize,
    #[serde(default = "defaults::fit_window")]
    pub fit_window: usize,
    #[serde(default = "defaults::oos_window")]
    pub oos_window: usize,
    /// AR orders of the view sources; source `ar<p>` uses order p.
    #[serde(default = "defaults::ar_orders")]
    pub ar_orders: Vec<usize>,
    /// Strategy tags: `pw`, `ci`, `ici`, `cu`, `single:<source>` where
    /// `<source>` is a source name (`ar1`, `oracle`) or numeric index.
    #[serde(default = "defaults::methods")]
    pub methods: Vec<String>,
    /// Trailing periods averaged into the dollar-volume estimate.
    #[serde(default = "defaults::volume_window")]
    pub volume_window: usize,
    /// Disable market impact (Λ = 0) for turnover comparisons.
    #[serde(default)]
    pub zero_impact: bool,
    #[serde(default)]
    pub cu: CuOptions,
    pub seed: u64,
}

mod defaults {
    pub fn gamma() -> f64 {
        10.0
    }
    pub fn prior_window() -> usize {
        20
    }
    pub fn one() -> usize {
        1
    }
    pub fn periods_per_year() -> usize {
        6
    }
    pub fn fit_window() -> usize {
        40
    }
    pub fn oos_window() -> usize {
        20
    }
    pub fn ar_orders() -> Vec<usize> {
        vec![1, 2, 3]
    }
    pub fn methods() -> Vec<String> {
        ["single:ar1", "pw", "ci", "ici", "cu"]
            .map(String::from)
            .to_vec()
    }
    pub fn volume_window() -> usize {
        3
    }
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            gamma: defaults::gamma(),
            prior_window: defaults::prior_window(),
            rebalance_every: defaults::one(),
            periods_per_year: defaults::periods_per_year(),
            fit_window: defaults::fit_window(),
            oos_window: defaults::oos_window(),
            ar_orders: defaults::ar_orders(),
            methods: defaults::methods(),
            volume_window: defaults::volume_window(),
            zero_impact: false,
            cu: CuOptions::default(),
            seed: 0,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.prior_window < 2 {
            return Err(Error::InvalidArgument(
                "prior_window must be at least 2".into(),
            ));
        }
        if self.rebalance_every < 1 || self.periods_per_year < 1 || self.volume_window < 1 {
            return Err(Error::InvalidArgument(
                "rebalance_every, periods_per_year, and volume_window must be at least 1".into(),
            ));
        }
        if self.ar_orders.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidArgument(
                "need at least one view source and one method".into(),
            ));
        }
        let max_order = *self.ar_orders.iter().max().unwrap();
        if max_order == 0 {
            return Err(Error::InvalidArgument("AR orders must be positive".into()));
        }
        if self.fit_window < max_order + 10 {
            return Err(Error::InvalidArgument(format!(
                "fit_window {} too short for AR order {max_order} (need ≥ {})",
                self.fit_window,
                max_order + 10
            )));
        }
        Ok(())
    }

    /// Periods before the first rebalance: enough history for both the view
    /// fit and the prior.
    pub fn warmup(&self) -> usize {
        self.fit_window.max(self.prior_window)
    }

    fn source_names(&self) -> Vec<String> {
        self.ar_orders.iter().map(|p| format!("ar{p}")).collect()
    }

    /// Whether any method tag references the perfect-foresight oracle source.
    fn wants_oracle(&self) -> bool {
        self.methods.iter().any(|m| m == "single:oracle")
    }

    fn resolve_method(&self, tag: &str, n_sources: usize, oracle_idx: Option<usize>) -> Result<FuseMethod> {
        if let Some(rest) = tag.strip_prefix("single:") {
            if let Ok(idx) = rest.parse::<usize>() {
                if idx >= n_sources {
                    return Err(Error::InvalidArgument(format!(
                        "source index {idx} out of range ({n_sources} sources)"
                    )));
                }
                return Ok(FuseMethod::Single(idx));
            }
            if rest == "oracle" {
                return oracle_idx.map(FuseMethod::Single).ok_or_else(|| {
                    Error::InvalidArgument("oracle source not available".into())
                });
            }
            if let Some(pos) = self.source_names().iter().position(|n| n == rest) {
                return Ok(FuseMethod::Single(pos));
            }
            return Err(Error::InvalidArgument(format!(
                "unknown view source '{rest}' in method tag '{tag}'"
            )));
        }
        tag.parse::<FuseMethod>()
    }
}

/// Per-year performance row; ratio cells are NaN when undefined for that
/// year (zero volatility or no downside observations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub year: i64,
    pub cuml_ret: f64,
    pub ret_vol: f64,
    pub sharpe: f64,
    pub ir: f64,
    pub sortino: f64,
    pub max_dd: f64,
}

/// One method's realized path over the held periods.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub method: String,
    /// Weights chosen at each rebalance date.
    pub weights: Vec<DVector<f64>>,
    pub gross: Vec<f64>,
    /// Cost expressed as a return on wealth, charged at rebalance periods.
    pub cost: Vec<f64>,
    pub net: Vec<f64>,
    /// ℓ1 weight-space turnover ‖w − R·w_prev‖₁ per rebalance.
    pub turnover_l1: Vec<f64>,
}

/// The full backtest output.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub config: BacktestConfig,
    /// First held period (the warmup end).
    pub start_period: usize,
    pub runs: Vec<MethodRun>,
    /// Methods that aborted, with the error text.
    pub failures: Vec<(String, String)>,
    /// Benchmark returns over the held periods.
    pub benchmark: Vec<f64>,
    pub metrics: Vec<MetricsRow>,
}

/// Everything the per-method loop needs at one rebalance date, shared across
/// methods.
struct RebalanceInputs {
    period: usize,
    /// Per-source predictive factor estimates (posterior pushed through the
    /// source's aleatoric covariance).
    predictive: Vec<crate::gaussian::GaussianEstimate>,
    model: FactorModel,
    cost: CostModel,
}

/// Scale a return series so its ex-post volatility equals the benchmark's.
pub fn normalize_to_benchmark_vol(strategy: &[f64], benchmark: &[f64]) -> Result<Vec<f64>> {
    if strategy.len() != benchmark.len() || strategy.len() < 2 {
        return Err(Error::DimensionMismatch {
            context: "normalization series lengths (need equal, ≥ 2)",
            got: benchmark.len(),
            expected: strategy.len(),
        });
    }
    let std = |xs: &[f64]| -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    };
    let s_vol = std(strategy);
    if s_vol <= 0.0 {
        return Err(Error::InvalidArgument(
            "cannot normalize a zero-volatility series".into(),
        ));
    }
    let scale = std(benchmark) / s_vol;
    Ok(strategy.iter().map(|r| r * scale).collect())
}

/// Cross-sectional factor estimate plus the regression mean-square error,
/// via OLS (identical to GLS under the isotropic noise model used here).
fn cross_section(x: &DMatrix<f64>, r: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let f_hat = market::estimate_factor_returns_ols(x, r)?;
    let resid = r - x * &f_hat;
    let dof = x.nrows().saturating_sub(x.ncols()).max(1);
    Ok((f_hat, resid.norm_squared() / dof as f64))
}

struct SourceState {
    order: usize,
    /// One-step-ahead forecast errors, one per past rebalance, per factor.
    errors: Vec<Vec<f64>>,
    /// Pending prediction per factor with the period it targets.
    pending: Option<(usize, Vec<f64>)>,
}

/// Run the backtest over a generated market path.
pub fn run(path: &MarketPath, cfg: &BacktestConfig) -> Result<BacktestReport> {
    cfg.validate()?;
    let horizon = path.horizon();
    let start = cfg.warmup();
    if horizon < start + cfg.periods_per_year.max(2) {
        return Err(Error::InsufficientData {
            context: "market horizon vs warmup",
            got: horizon,
            need: start + cfg.periods_per_year.max(2),
        });
    }
    let k = path.config.n_factors;

    // factor-return estimates and cross-sectional MSEs for every period
    let mut f_hat: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    let mut sigma2: Vec<f64> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let (f, s2) = cross_section(&path.exposures[t], &path.asset_returns[t])?;
        f_hat.push(f);
        sigma2.push(s2);
    }

    let use_oracle = cfg.wants_oracle();
    let mut source_states: Vec<SourceState> = cfg
        .ar_orders
        .iter()
        .map(|&order| SourceState {
            order,
            errors: vec![Vec::new(); k],
            pending: None,
        })
        .collect();
    let oracle_idx = use_oracle.then_some(cfg.ar_orders.len());

    // shared per-rebalance inputs
    let mut shared: Vec<RebalanceInputs> = Vec::new();
    let mut prev_pi: Option<f64> = None;
    let mut t = start;
    while t < horizon {
        // settle pending forecasts now that f̂ up to t−1 is known
        for state in &mut source_states {
            if let Some((target, preds)) = state.pending.take() {
                debug_assert!(target < t);
                for j in 0..k {
                    state.errors[j].push(f_hat[target][j] - preds[j]);
                    let excess = state.errors[j].len().saturating_sub(cfg.oos_window);
                    if excess > 0 {
                        state.errors[j].drain(..excess);
                    }
                }
            }
        }

        // prior over premia from the trailing window: mean of the estimates,
        // with diagonal V equal to the squared standard error of that mean
        // (the closed-form epistemic content of a trailing-mean estimator)
        let window = &f_hat[t - cfg.prior_window..t];
        let xi = DVector::from_fn(k, |j, _| {
            window.iter().map(|f| f[j]).sum::<f64>() / cfg.prior_window as f64
        });
        let v = DMatrix::from_diagonal(&DVector::from_fn(k, |j, _| {
            let var = window
                .iter()
                .map(|f| (f[j] - xi[j]).powi(2))
                .sum::<f64>()
                / (cfg.prior_window - 1) as f64;
            (var / cfg.prior_window as f64).max(1e-8)
        }));
        let prior = Prior::new(xi, v)?;

        // per-source views and predictive factor estimates
        let fit_slice_start = t - cfg.fit_window.min(t);
        let mut predictive = Vec::with_capacity(source_states.len() + 1);
        for state in &mut source_states {
            let mut q = DVector::zeros(k);
            let mut omega = DVector::zeros(k);
            let mut aleatoric = DVector::zeros(k);
            let mut preds = Vec::with_capacity(k);
            for j in 0..k {
                let series: Vec<f64> = f_hat[fit_slice_start..t].iter().map(|f| f[j]).collect();
                let model = views::fit_ar(&series, state.order)?;
                let view = views::predict_view(&model, &series, &state.errors[j])?;
                q[j] = view.mean;
                omega[j] = view.epistemic;
                aleatoric[j] = view.aleatoric;
                preds.push(view.mean);
            }
            state.pending = Some((t, preds));
            let sv = SourceViews::new(
                ViewSet::new(q, omega)?,
                DMatrix::from_diagonal(&aleatoric),
            )?;
            let post = blapt::posterior_theta(&prior, &sv.views)?;
            predictive.push(blapt::predictive_factors(&post, &sv.factor_cov)?);
        }
        if use_oracle {
            let q = path.factor_returns[t].clone();
            let tiny = DVector::from_element(k, 1e-12);
            let sv = SourceViews::new(ViewSet::new(q, tiny.clone())?, DMatrix::from_diagonal(&tiny))?;
            let post = blapt::posterior_theta(&prior, &sv.views)?;
            predictive.push(blapt::predictive_factors(&post, &sv.factor_cov)?);
        }

        // factor model at t: known exposures, isotropic idio estimate from
        // the most recent completed cross-section, diagonal factor covariance
        // from the fit window
        let d_hat = sigma2[t - 1].max(1e-12);
        let fit_f = &f_hat[fit_slice_start..t];
        let f_cov = DMatrix::from_diagonal(&DVector::from_fn(k, |j, _| {
            let m = fit_f.iter().map(|f| f[j]).sum::<f64>() / fit_f.len() as f64;
            (fit_f.iter().map(|f| (f[j] - m).powi(2)).sum::<f64>() / (fit_f.len() - 1) as f64)
                .max(1e-12)
        }));
        let model = FactorModel::new(
            path.exposures[t].clone(),
            DVector::from_element(path.config.n_assets, d_hat),
            f_cov,
        )?;

        // cost model at t
        let volumes = path.rolling_volumes(t, cfg.volume_window);
        let pi = 0.1 * volumes.sum();
        let adj: Vec<f64> = match prev_pi {
            None => vec![1.0; path.config.n_assets],
            Some(prev) => {
                let elapsed = t - cfg.rebalance_every.min(t)..t;
                (0..path.config.n_assets)
                    .map(|i| {
                        let growth: f64 = elapsed
                            .clone()
                            .map(|s| 1.0 + path.asset_returns[s][i])
                            .product();
                        growth * prev / pi
                    })
                    .collect()
            }
        };
        let mut cost = CostModel::new(volumes.iter().copied().collect(), pi, adj)?;
        if cfg.zero_impact {
            cost.impact = vec![0.0; path.config.n_assets];
        }
        prev_pi = Some(pi);

        shared.push(RebalanceInputs {
            period: t,
            predictive,
            model,
            cost,
        });
        t += cfg.rebalance_every;
    }

    let n_sources = source_states.len() + usize::from(use_oracle);
    let methods: Vec<(String, FuseMethod)> = cfg
        .methods
        .iter()
        .map(|tag| Ok((tag.clone(), cfg.resolve_method(tag, n_sources, oracle_idx)?)))
        .collect::<Result<_>>()?;

    let outcomes: Vec<(String, Result<MethodRun>)> = methods
        .par_iter()
        .map(|(tag, fuse)| (tag.clone(), run_method(path, cfg, &shared, tag, *fuse)))
        .collect();

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (tag, outcome) in outcomes {
        match outcome {
            Ok(run) => runs.push(run),
            Err(e) => failures.push((tag, e.to_string())),
        }
    }

    let benchmark: Vec<f64> = path.benchmark[start..].to_vec();
    let metrics = assemble_metrics(&runs, &benchmark, cfg.periods_per_year);
    Ok(BacktestReport {
        config: cfg.clone(),
        start_period: start,
        runs,
        failures,
        benchmark,
        metrics,
    })
}

fn run_method(
    path: &MarketPath,
    cfg: &BacktestConfig,
    shared: &[RebalanceInputs],
    tag: &str,
    fuse: FuseMethod,
) -> Result<MethodRun> {
    let n = path.config.n_assets;
    let horizon = path.horizon();
    let mut w_prev = DVector::zeros(n);
    let mut weights = Vec::with_capacity(shared.len());
    let mut gross = Vec::new();
    let mut cost_ret = Vec::new();
    let mut net = Vec::new();
    let mut turnover_l1 = Vec::with_capacity(shared.len());

    for (idx, inputs) in shared.iter().enumerate() {
        let fused = match fuse {
            FuseMethod::Single(s) => inputs.predictive[s].clone(),
            _ if inputs.predictive.len() == 1 => inputs.predictive[0].clone(),
            FuseMethod::Pw => crate::fusion::fuse_pw(&inputs.predictive)?,
            FuseMethod::Ci => crate::fusion::fuse_ci(&inputs.predictive)?.0,
            FuseMethod::Ici => crate::fusion::fuse_ici(&inputs.predictive)?.estimate,
            FuseMethod::Cu => crate::fusion::fuse_cu(&inputs.predictive, &cfg.cu)?.estimate,
        };
        let pred = blapt::predictive_returns(&inputs.model, &fused)?;
        let w = portfolio::optimal_weights_tc(
            pred.mean(),
            pred.cov(),
            cfg.gamma,
            &inputs.cost,
            &w_prev,
        )?;

        let delta = portfolio::turnover(
            &w,
            &w_prev,
            &inputs.cost.realized_return_adj,
            inputs.cost.wealth,
        )?;
        let tc_dollars = portfolio::transaction_cost_dollars(&delta, &inputs.cost.impact)?;
        let tc = tc_dollars / inputs.cost.wealth;
        turnover_l1.push(delta.iter().map(|d| d.abs()).sum::<f64>() / inputs.cost.wealth);

        let block_end = shared
            .get(idx + 1)
            .map_or(horizon, |next| next.period);
        for s in inputs.period..block_end {
            let g = w.dot(&path.asset_returns[s]);
            gross.push(g);
            let c = if s == inputs.period { tc } else { 0.0 };
            cost_ret.push(c);
            net.push(g - c);
        }
        weights.push(w.clone());
        w_prev = w;
    }

    Ok(MethodRun {
        method: tag.to_string(),
        weights,
        gross,
        cost: cost_ret,
        net,
        turnover_l1,
    })
}

/// Benchmark label used in metric rows and equity curves.
pub const BENCHMARK_LABEL: &str = "benchmark";

fn assemble_metrics(runs: &[MethodRun], benchmark: &[f64], ppy: usize) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    let n_years = benchmark.len() / ppy;
    let series: Vec<(&str, &[f64])> = std::iter::once((BENCHMARK_LABEL, benchmark))
        .chain(runs.iter().map(|r| (r.method.as_str(), r.net.as_slice())))
        .collect();
    for (name, rets) in series {
        for year in 1..=n_years {
            let lo = (year - 1) * ppy;
            let hi = year * ppy;
            let raw = &rets[lo..hi.min(rets.len())];
            if raw.len() < ppy {
                continue;
            }
            let bench_year = &benchmark[lo..hi];
            let is_benchmark = name == BENCHMARK_LABEL;
            let scaled = if is_benchmark {
                raw.to_vec()
            } else {
                normalize_to_benchmark_vol(raw, bench_year).unwrap_or_else(|_| raw.to_vec())
            };
            let ir = if is_benchmark {
                0.0
            } else {
                metrics::information_ratio(&scaled, bench_year, ppy).unwrap_or(f64::NAN)
            };
            rows.push(MetricsRow {
                method: name.to_string(),
                year: year as i64,
                cuml_ret: metrics::cumulative_return(&scaled),
                ret_vol: metrics::annualized_vol(&scaled, ppy),
                sharpe: metrics::sharpe(&scaled, ppy).unwrap_or(f64::NAN),
                ir,
                sortino: metrics::sortino(&scaled, ppy).unwrap_or(f64::NAN),
                max_dd: metrics::max_drawdown(&scaled).unwrap_or(f64::NAN),
            });
        }
    }
    rows
}

impl BacktestReport {
    /// Per-method map year → annual Sharpe, for the significance battery.
    pub fn sharpe_by_year(&self) -> Vec<(String, BTreeMap<i64, f64>)> {
        sharpe_by_year_from_rows(&self.metrics)
    }
}

/// Group per-year Sharpe cells by method (file order preserved), excluding
/// the benchmark row and any non-finite cells, ready for
/// `metrics::significance_table`.
pub fn sharpe_by_year_from_rows(rows: &[MetricsRow]) -> Vec<(String, BTreeMap<i64, f64>)> {
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, BTreeMap<i64, f64>> = BTreeMap::new();
    for row in rows {
        if row.method == BENCHMARK_LABEL || !row.sharpe.is_finite() {
            continue;
        }
        if !map.contains_key(&row.method) {
            order.push(row.method.clone());
        }
        map.entry(row.method.clone())
            .or_default()
            .insert(row.year, row.sharpe);
    }
    order
        .into_iter()
        .map(|m| {
            let years = map.remove(&m).unwrap_or_default();
            (m, years)
        })
        .collect()
}

/// Write per-year metric rows with columns exactly
/// `method,year,cuml_ret,ret_vol,sharpe,ir,sortino,max_dd`.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    crate::fsio::atomic_csv(path, |writer| {
        writer.write_record([
            "method", "year", "cuml_ret", "ret_vol", "sharpe", "ir", "sortino", "max_dd",
        ])?;
        // 17 significant digits: every f64 round-trips exactly, so a
        // significance table recomputed from this file matches the one
        // computed from the in-memory rows byte for byte
        for r in rows {
            writer.write_record([
                r.method.clone(),
                r.year.to_string(),
                format!("{:.17e}", r.cuml_ret),
                format!("{:.17e}", r.ret_vol),
                format!("{:.17e}", r.sharpe),
                format!("{:.17e}", r.ir),
                format!("{:.17e}", r.sortino),
                format!("{:.17e}", r.max_dd),
            ])?;
        }
        Ok(())
    })
}

/// Read rows written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<MetricsRow>().enumerate() {
        rows.push(rec.map_err(|e| Error::Schema {
            path: path.display().to_string(),
            row: i + 2,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Write equity curves (compounded net returns, one column per method, plus
/// the benchmark) over the held periods.
pub fn write_equity_csv(path: &Path, report: &BacktestReport) -> Result<()> {
    crate::fsio::atomic_csv(path, |writer| {
        let mut header = vec!["period".to_string(), BENCHMARK_LABEL.to_string()];
        header.extend(report.runs.iter().map(|r| r.method.clone()));
        writer.write_record(&header)?;
        let curves: Vec<Vec<f64>> = std::iter::once(metrics::equity_curve(&report.benchmark))
            .chain(report.runs.iter().map(|r| metrics::equity_curve(&r.net)))
            .collect();
        for t in 0..report.benchmark.len() {
            let mut rec = vec![(report.start_period + t).to_string()];
            rec.extend(curves.iter().map(|c| format!("{:.12e}", c[t])));
            writer.write_record(&rec)?;
        }
        Ok(())
    })
}
