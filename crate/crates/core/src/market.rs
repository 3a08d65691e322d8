//! Synthetic factor-market generation and cross-sectional factor-return
//! estimation.
//!
//! The generator produces a panel obeying r_t = X_t f_t + ε_t: factor returns
//! drawn i.i.d. N(μ_f, F), exposures drawn once and then varied slowly
//! (stationary per-entry AR(1) with coefficient 0.99), idiosyncratic noise
//! N(0, idio_scale²·I), and a lognormal cross-section of dollar volumes held
//! fixed through time.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::seeding::stream_rng;

/// Persistence rate for exposures: AR(1) coefficient per entry.
const EXPOSURE_PERSISTENCE: f64 = 0.99;
/// Lognormal sigma for the volume cross-section.
const VOLUME_SIGMA: f64 = 0.5;

/// Configuration of one synthetic market path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    pub n_assets: usize,
    pub n_factors: usize,
    pub horizon: usize,
    pub true_premia: Vec<f64>,
    pub factor_cov: Vec<Vec<f64>>,
    pub idio_scale: f64,
    pub volume_scale: f64,
    pub seed: u64,
}

impl MarketConfig {
    /// Validate the configuration and return the factor covariance as a
    /// checked SPD matrix.
    pub fn validate(&self) -> Result<DMatrix<f64>> {
        if self.n_factors < 1 || self.n_assets < self.n_factors {
            return Err(Error::InvalidArgument(format!(
                "need n_assets ≥ n_factors ≥ 1, got {} assets, {} factors",
                self.n_assets, self.n_factors
            )));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if self.true_premia.len() != self.n_factors {
            return Err(Error::DimensionMismatch {
                context: "true premia vs factor count",
                got: self.true_premia.len(),
                expected: self.n_factors,
            });
        }
        if self.idio_scale < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "idio_scale must be nonnegative, got {}",
                self.idio_scale
            )));
        }
        if self.volume_scale <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "volume_scale must be positive, got {}",
                self.volume_scale
            )));
        }
        let f = linalg::mat_from_rows(&self.factor_cov)?;
        let f = linalg::check_symmetric(&f)?;
        if f.nrows() != self.n_factors {
            return Err(Error::DimensionMismatch {
                context: "factor covariance vs factor count",
                got: f.nrows(),
                expected: self.n_factors,
            });
        }
        let min_eig = linalg::min_eigenvalue(&f);
        if min_eig <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eig });
        }
        Ok(f)
    }
}

/// A generated market panel.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPath {
    pub config: MarketConfig,
    /// Per-period n×k exposure matrices.
    pub exposures: Vec<DMatrix<f64>>,
    /// Per-period factor returns (length k each).
    pub factor_returns: Vec<DVector<f64>>,
    /// Per-period asset returns (length n each).
    pub asset_returns: Vec<DVector<f64>>,
    /// Per-period diagonal of the idiosyncratic covariance D_t.
    pub idio_diag: Vec<DVector<f64>>,
    /// Per-period dollar volumes.
    pub volumes: Vec<DVector<f64>>,
    /// Equal-weight asset return per period.
    pub benchmark: Vec<f64>,
}

impl MarketPath {
    pub fn horizon(&self) -> usize {
        self.factor_returns.len()
    }

    /// Trailing mean of dollar volumes over the last `window` periods ending
    /// at `t` (inclusive), truncated at the start of the path.
    pub fn rolling_volumes(&self, t: usize, window: usize) -> DVector<f64> {
        let lo = (t + 1).saturating_sub(window.max(1));
        let span = &self.volumes[lo..=t];
        let mut acc = DVector::zeros(self.config.n_assets);
        for v in span {
            acc += v;
        }
        acc / span.len() as f64
    }
}

fn standard_normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Generate a market path. Deterministic given the config (including seed).
pub fn generate(config: &MarketConfig) -> Result<MarketPath> {
    let f_cov = config.validate()?;
    let (n, k, horizon) = (config.n_assets, config.n_factors, config.horizon);
    let f_chol = linalg::spd_cholesky(&f_cov, "factor covariance")?;
    let premia = DVector::from_column_slice(&config.true_premia);

    let mut rng_f = stream_rng(config.seed, 1);
    let mut rng_x = stream_rng(config.seed, 2);
    let mut rng_e = stream_rng(config.seed, 3);
    let mut rng_v = stream_rng(config.seed, 4);

    // constant lognormal volume cross-section
    let volume_draw = DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng_v);
        config.volume_scale * (VOLUME_SIGMA * z).exp()
    });

    // exposures: X_0 ~ N(0,1) entries, then stationary AR(1) so the marginal
    // stays N(0,1) at every horizon
    let innovation_sd = (1.0 - EXPOSURE_PERSISTENCE * EXPOSURE_PERSISTENCE).sqrt();
    let mut x = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng_x));

    let mut exposures = Vec::with_capacity(horizon);
    let mut factor_returns = Vec::with_capacity(horizon);
    let mut asset_returns = Vec::with_capacity(horizon);
    let mut idio_diag = Vec::with_capacity(horizon);
    let mut volumes = Vec::with_capacity(horizon);
    let mut benchmark = Vec::with_capacity(horizon);

    for t in 0..horizon {
        if t > 0 {
            for entry in x.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng_x);
                *entry = EXPOSURE_PERSISTENCE * *entry + innovation_sd * z;
            }
        }
        let f_t = &premia + f_chol.l() * standard_normal_vec(&mut rng_f, k);
        let eps = if config.idio_scale > 0.0 {
            standard_normal_vec(&mut rng_e, n) * config.idio_scale
        } else {
            DVector::zeros(n)
        };
        let r_t = &x * &f_t + eps;
        benchmark.push(r_t.mean());
        exposures.push(x.clone());
        factor_returns.push(f_t);
        asset_returns.push(r_t);
        idio_diag.push(DVector::from_element(n, config.idio_scale * config.idio_scale));
        volumes.push(volume_draw.clone());
    }

    Ok(MarketPath {
        config: config.clone(),
        exposures,
        factor_returns,
        asset_returns,
        idio_diag,
        volumes,
        benchmark,
    })
}

/// GLS cross-sectional factor-return estimate f̂ = (X'D^{-1}X)^{-1} X'D^{-1} r
/// for diagonal D (given as its diagonal).
pub fn estimate_factor_returns(
    x: &DMatrix<f64>,
    d_diag: &DVector<f64>,
    r: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (n, k) = x.shape();
    if d_diag.len() != n || r.len() != n {
        return Err(Error::DimensionMismatch {
            context: "cross-sectional regression inputs",
            got: d_diag.len().min(r.len()),
            expected: n,
        });
    }
    if d_diag.iter().any(|&d| d <= 0.0) {
        return Err(Error::InvalidArgument(
            "idiosyncratic variances must be strictly positive".into(),
        ));
    }
    let mut xw = x.clone(); // D^{-1}X
    for i in 0..n {
        xw.row_mut(i).scale_mut(1.0 / d_diag[i]);
    }
    let gram = linalg::symmetrize(&(x.transpose() * &xw));
    let max_eig = gram
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    let min_eig = linalg::min_eigenvalue(&gram);
    if min_eig <= 1e-12 * max_eig.max(1.0) {
        return Err(Error::Singular {
            context: "cross-sectional regression (rank-deficient exposures)",
            condition: if min_eig > 0.0 { max_eig / min_eig } else { f64::INFINITY },
        });
    }
    let _ = k;
    linalg::spd_solve(&gram, &(xw.transpose() * r), "cross-sectional regression")
}

/// OLS variant: GLS with unit idiosyncratic variances.
pub fn estimate_factor_returns_ols(x: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    estimate_factor_returns(x, &DVector::from_element(x.nrows(), 1.0), r)
}

// ---- persistence ----

fn write_panel_csv(path: &Path, prefix: &str, series: &[DVector<f64>]) -> Result<()> {
    crate::fsio::atomic_csv(path, |writer| {
        let width = series.first().map_or(0, |v| v.len());
        let mut header = vec!["period".to_string()];
        header.extend((0..width).map(|j| format!("{prefix}{j}")));
        writer.write_record(&header)?;
        for (t, row) in series.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.17e}")));
            writer.write_record(&rec)?;
        }
        Ok(())
    })
}

fn read_panel_csv(path: &Path, expect_width: usize) -> Result<Vec<DVector<f64>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let row_no = i + 2;
        if row.len() != expect_width + 1 {
            return Err(Error::Schema {
                path: path.display().to_string(),
                row: row_no,
                message: format!("expected {} columns, got {}", expect_width + 1, row.len()),
            });
        }
        let values: Vec<f64> = row
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Schema {
                path: path.display().to_string(),
                row: row_no,
                message: e.to_string(),
            })?;
        out.push(DVector::from_vec(values));
    }
    Ok(out)
}

fn write_matrix_csv(path: &Path, prefix: &str, m: &DMatrix<f64>) -> Result<()> {
    crate::fsio::atomic_csv(path, |writer| {
        let header: Vec<String> = (0..m.ncols()).map(|j| format!("{prefix}{j}")).collect();
        writer.write_record(&header)?;
        for i in 0..m.nrows() {
            let rec: Vec<String> =
                (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
            writer.write_record(&rec)?;
        }
        Ok(())
    })
}

fn read_matrix_csv(path: &Path, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut count = 0usize;
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let row_no = i + 2;
        if row.len() != cols {
            return Err(Error::Schema {
                path: path.display().to_string(),
                row: row_no,
                message: format!("expected {cols} columns, got {}", row.len()),
            });
        }
        for s in row.iter() {
            data.push(s.parse::<f64>().map_err(|e| Error::Schema {
                path: path.display().to_string(),
                row: row_no,
                message: e.to_string(),
            })?);
        }
        count += 1;
    }
    if count != rows {
        return Err(Error::Schema {
            path: path.display().to_string(),
            row: count + 1,
            message: format!("expected {rows} rows, got {count}"),
        });
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Persist a market path to a directory: `manifest.json` (the config),
/// `factors.csv`, `returns.csv`, `volumes.csv`, `idio.csv`, and one
/// `exposures_<t>.csv` per period.
pub fn save(path: &MarketPath, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = serde_json::to_string_pretty(&path.config)?;
    crate::fsio::atomic_write_bytes(&dir.join("manifest.json"), manifest.as_bytes())?;
    write_panel_csv(&dir.join("factors.csv"), "f", &path.factor_returns)?;
    write_panel_csv(&dir.join("returns.csv"), "a", &path.asset_returns)?;
    write_panel_csv(&dir.join("volumes.csv"), "a", &path.volumes)?;
    write_panel_csv(&dir.join("idio.csv"), "a", &path.idio_diag)?;
    for (t, x) in path.exposures.iter().enumerate() {
        write_matrix_csv(&dir.join(format!("exposures_{t}.csv")), "f", x)?;
    }
    Ok(())
}

/// Load a market path saved by [`save`]. The benchmark series is recomputed
/// as the equal-weight asset return.
pub fn load(dir: &Path) -> Result<MarketPath> {
    let manifest_path = dir.join("manifest.json");
    let manifest = std::fs::read_to_string(&manifest_path).map_err(|e| {
        Error::InvalidArgument(format!("cannot read {}: {e}", manifest_path.display()))
    })?;
    let config: MarketConfig = serde_json::from_str(&manifest)?;
    config.validate()?;
    let (n, k, horizon) = (config.n_assets, config.n_factors, config.horizon);

    let factor_returns = read_panel_csv(&dir.join("factors.csv"), k)?;
    let asset_returns = read_panel_csv(&dir.join("returns.csv"), n)?;
    let volumes = read_panel_csv(&dir.join("volumes.csv"), n)?;
    let idio_diag = read_panel_csv(&dir.join("idio.csv"), n)?;
    for (name, len) in [
        ("factors.csv", factor_returns.len()),
        ("returns.csv", asset_returns.len()),
        ("volumes.csv", volumes.len()),
        ("idio.csv", idio_diag.len()),
    ] {
        if len != horizon {
            return Err(Error::Schema {
                path: dir.join(name).display().to_string(),
                row: len + 1,
                message: format!("expected {horizon} periods, got {len}"),
            });
        }
    }
    let mut exposures = Vec::with_capacity(horizon);
    for t in 0..horizon {
        exposures.push(read_matrix_csv(&dir.join(format!("exposures_{t}.csv")), n, k)?);
    }
    let benchmark = asset_returns.iter().map(|r| r.mean()).collect();
    Ok(MarketPath {
        config,
        exposures,
        factor_returns,
        asset_returns,
        idio_diag,
        volumes,
        benchmark,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_config() -> MarketConfig {
        MarketConfig {
            n_assets: 6,
            n_factors: 2,
            horizon: 40,
            true_premia: vec![0.03, -0.01],
            factor_cov: vec![vec![0.04, 0.01], vec![0.01, 0.09]],
            idio_scale: 0.05,
            volume_scale: 100.0,
            seed: 17,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_config();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_market_is_exactly_factor_driven() {
        let mut cfg = small_config();
        cfg.idio_scale = 0.0;
        let path = generate(&cfg).unwrap();
        for t in 0..cfg.horizon {
            let implied = &path.exposures[t] * &path.factor_returns[t];
            assert_relative_eq!(path.asset_returns[t], implied, epsilon = 1e-14);
        }
    }

    #[test]
    fn returns_decompose_with_recorded_noise_scale() {
        let cfg = small_config();
        let path = generate(&cfg).unwrap();
        for t in 0..cfg.horizon {
            let resid = &path.asset_returns[t] - &path.exposures[t] * &path.factor_returns[t];
            // residuals exist and have the configured scale on average
            assert!(resid.norm() > 0.0);
            assert_relative_eq!(path.idio_diag[t][0], cfg.idio_scale * cfg.idio_scale);
        }
        assert!(path.volumes.iter().all(|v| v.iter().all(|&l| l > 0.0)));
    }

    #[test]
    fn factor_sample_mean_within_clt_band() {
        let mut cfg = small_config();
        cfg.horizon = 50_000;
        cfg.n_assets = 3;
        let path = generate(&cfg).unwrap();
        let t = cfg.horizon as f64;
        for j in 0..cfg.n_factors {
            let mean = path.factor_returns.iter().map(|f| f[j]).sum::<f64>() / t;
            let se = (cfg.factor_cov[j][j] / t).sqrt();
            assert!(
                (mean - cfg.true_premia[j]).abs() <= 3.0 * se,
                "factor {j}: mean {mean} vs {} (se {se})",
                cfg.true_premia[j]
            );
        }
    }

    #[test]
    fn exposures_stay_stationary() {
        let mut cfg = small_config();
        cfg.horizon = 2_000;
        // enough entries that the distant-lag sample correlation concentrates
        cfg.n_assets = 60;
        let path = generate(&cfg).unwrap();
        // marginal variance of each entry should hover near 1 at every lag
        let first = &path.exposures[0];
        let last = &path.exposures[cfg.horizon - 1];
        let var = |m: &DMatrix<f64>| m.iter().map(|x| x * x).sum::<f64>() / (m.len() as f64);
        assert!((0.3..3.0).contains(&var(first)));
        assert!((0.3..3.0).contains(&var(last)));
        // consecutive exposures are highly correlated, distant ones much less
        let corr = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
            num / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
                * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        assert!(corr(&path.exposures[0], &path.exposures[1]) > 0.9);
        assert!(corr(first, last).abs() < 0.5);
    }

    #[test]
    fn gls_intercept_only_is_the_mean() {
        let x = DMatrix::from_element(5, 1, 1.0);
        let d = DVector::from_element(5, 1.0);
        let r = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let f = estimate_factor_returns(&x, &d, &r).unwrap();
        assert_relative_eq!(f[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn gls_recovers_noiseless_factors() {
        let cfg = small_config();
        let path = generate(&cfg).unwrap();
        let x = &path.exposures[5];
        let f_true = &path.factor_returns[5];
        let r = x * f_true;
        let d = DVector::from_element(cfg.n_assets, 0.3);
        let f_hat = estimate_factor_returns(x, &d, &r).unwrap();
        assert!((f_hat - f_true).norm() <= 1e-10);
    }

    #[test]
    fn gls_matches_normal_equations_oracle() {
        let cfg = small_config();
        let path = generate(&cfg).unwrap();
        let x = &path.exposures[7];
        let r = &path.asset_returns[7];
        let d = DVector::from_vec((0..cfg.n_assets).map(|i| 0.2 + 0.1 * i as f64).collect());
        let f_hat = estimate_factor_returns(x, &d, r).unwrap();

        // oracle: explicitly form W = D^{-1}, solve (X'WX) f = X'Wr by full LU
        let w = DMatrix::from_diagonal(&d.map(|v| 1.0 / v));
        let lhs = x.transpose() * &w * x;
        let rhs = x.transpose() * &w * r;
        let f_oracle = lhs.lu().solve(&rhs).unwrap();
        assert!((f_hat - f_oracle).norm() <= 1e-10);
    }

    #[test]
    fn gls_residuals_are_weighted_orthogonal_to_exposures() {
        let cfg = small_config();
        let path = generate(&cfg).unwrap();
        for t in [0, 10, 39] {
            let x = &path.exposures[t];
            let r = &path.asset_returns[t];
            let d = DVector::from_element(cfg.n_assets, 0.05 * 0.05);
            let f_hat = estimate_factor_returns(x, &d, r).unwrap();
            let resid = r - x * &f_hat;
            let weighted: DVector<f64> =
                x.transpose() * DVector::from_fn(cfg.n_assets, |i, _| resid[i] / d[i]);
            let scale = r.norm() / (0.05 * 0.05);
            assert!(weighted.amax() <= 1e-9 * scale.max(1.0));
        }
    }

    #[test]
    fn gls_rejects_rank_deficient_exposures() {
        let mut x = DMatrix::zeros(4, 2);
        for i in 0..4 {
            x[(i, 0)] = i as f64 + 1.0;
            x[(i, 1)] = 2.0 * (i as f64 + 1.0);
        }
        let d = DVector::from_element(4, 1.0);
        let r = DVector::from_element(4, 0.1);
        assert!(matches!(
            estimate_factor_returns(&x, &d, &r),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn estimated_factor_covariance_tracks_truth_loosely() {
        let mut cfg = small_config();
        cfg.horizon = 50_000;
        cfg.n_assets = 12;
        cfg.idio_scale = 0.02;
        let path = generate(&cfg).unwrap();
        let mut estimates = Vec::with_capacity(cfg.horizon);
        for t in 0..cfg.horizon {
            estimates.push(
                estimate_factor_returns(&path.exposures[t], &path.idio_diag[t], &path.asset_returns[t])
                    .unwrap(),
            );
        }
        let t = cfg.horizon as f64;
        let mean = estimates.iter().fold(DVector::zeros(2), |a, b| a + b) / t;
        let mut cov = DMatrix::zeros(2, 2);
        for f in &estimates {
            let c = f - &mean;
            cov += &c * c.transpose();
        }
        cov /= t - 1.0;
        // sample covariance ≈ F + estimation noise, so ≥ F roughly and within 25%
        for i in 0..2 {
            for j in 0..2 {
                let truth = cfg.factor_cov[i][j];
                assert!(
                    (cov[(i, j)] - truth).abs() <= 0.25 * truth.abs().max(0.02),
                    "cov[{i}{j}] = {} vs {truth}",
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = MarketConfig {
            horizon: 7,
            ..small_config()
        };
        let path = generate(&cfg).unwrap();
        save(&path, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back.config, cfg);
        for t in 0..cfg.horizon {
            assert_relative_eq!(back.exposures[t], path.exposures[t], epsilon = 1e-15);
            assert_relative_eq!(back.factor_returns[t], path.factor_returns[t], epsilon = 1e-15);
            assert_relative_eq!(back.asset_returns[t], path.asset_returns[t], epsilon = 1e-15);
            assert_relative_eq!(back.volumes[t], path.volumes[t], epsilon = 1e-15);
            assert_relative_eq!(back.idio_diag[t], path.idio_diag[t], epsilon = 1e-15);
            assert_relative_eq!(back.benchmark[t], path.benchmark[t], epsilon = 1e-12);
        }
    }

    #[test]
    fn rolling_volumes_truncate_at_start() {
        let cfg = small_config();
        let mut path = generate(&cfg).unwrap();
        // make volumes time-varying to exercise the mean
        for (t, v) in path.volumes.iter_mut().enumerate() {
            *v = DVector::from_element(cfg.n_assets, (t + 1) as f64);
        }
        let w = path.rolling_volumes(0, 3);
        assert_relative_eq!(w[0], 1.0);
        let w = path.rolling_volumes(4, 3);
        assert_relative_eq!(w[0], 4.0); // mean of 3,4,5
    }
}
