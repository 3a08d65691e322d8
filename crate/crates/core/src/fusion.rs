//! Multi-source fusion of Gaussian estimates: precision weighting (PW),
//! Covariance Intersection (CI), Inverse Covariance Intersection (ICI), and
//! Covariance Union (CU).
//!
//! PW is optimal when source errors are uncorrelated; CI stays consistent
//! under unknown cross-correlation; ICI subtracts an upper bound on shared
//! information and is tighter than CI while remaining consistent; CU tolerates
//! mutually inconsistent sources by enclosing every source's uncertainty and
//! mean discrepancy.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianEstimate;
use crate::linalg;
use crate::optim;

/// Convex weights over sources, as produced by the CI/ICI searches.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    omegas: Vec<f64>,
}

impl FusionWeights {
    pub fn new(omegas: Vec<f64>) -> Result<Self> {
        let sum: f64 = omegas.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "fusion weights must sum to 1, got {sum}"
            )));
        }
        if omegas.iter().any(|&w| !(-1e-12..=1.0 + 1e-12).contains(&w)) {
            return Err(Error::InvalidArgument(
                "fusion weights must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            omegas: omegas.into_iter().map(|w| w.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }
}

/// Scalar objective minimized by the ω searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightObjective {
    #[default]
    Trace,
    LogDet,
}

/// Result of covariance-union fusion: the fused estimate, the achieved
/// determinant, and the worst constraint slack
/// min_s min-eig(Σ̂ − Σ̂_s − (μ̂−μ̂_s)(μ̂−μ̂_s)').
#[derive(Debug, Clone)]
pub struct CUSolution {
    pub estimate: GaussianEstimate,
    pub objective: f64,
    pub constraint_slack: f64,
}

/// Covariance-union solver options. The penalty weight doubles from
/// `rho_init` to `rho_max`, each stage running Nelder-Mead for at most
/// `inner_iters_per_dim`·dim iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CuOptions {
    pub rho_init: f64,
    pub rho_max: f64,
    pub inner_iters_per_dim: usize,
    pub f_tol: f64,
}

impl Default for CuOptions {
    fn default() -> Self {
        Self {
            rho_init: 10.0,
            rho_max: 1e6,
            inner_iters_per_dim: 80,
            f_tol: 1e-12,
        }
    }
}

const OMEGA_GRID: usize = 33;
const OMEGA_TOL: f64 = 1e-10;

fn check_sources(sources: &[GaussianEstimate], min_count: usize) -> Result<usize> {
    if sources.len() < min_count {
        return Err(Error::InsufficientData {
            context: "fusion sources",
            got: sources.len(),
            need: min_count,
        });
    }
    let dim = sources[0].dim();
    for s in sources {
        if s.dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "fusion source dimensions",
                got: s.dim(),
                expected: dim,
            });
        }
    }
    Ok(dim)
}

fn precisions(sources: &[GaussianEstimate]) -> Result<Vec<DMatrix<f64>>> {
    sources
        .iter()
        .map(|s| linalg::spd_inverse(s.cov(), "fusion source covariance"))
        .collect()
}

fn all_covs_equal(sources: &[GaussianEstimate]) -> bool {
    sources[1..].iter().all(|s| {
        (s.cov() - sources[0].cov())
            .iter()
            .all(|d| d.abs() <= 1e-12)
    })
}

/// Precision-weighted fusion: Σ̂ = (Σ_s Σ_s^{-1})^{-1},
/// μ̂ = Σ̂ · Σ_s Σ_s^{-1} μ_s. Optimal when cross-covariances are zero.
pub fn fuse_pw(sources: &[GaussianEstimate]) -> Result<GaussianEstimate> {
    let dim = check_sources(sources, 1)?;
    let precs = precisions(sources)?;
    let mut total_prec = DMatrix::zeros(dim, dim);
    let mut weighted_mean = DVector::zeros(dim);
    for (s, p) in sources.iter().zip(&precs) {
        total_prec += p;
        weighted_mean += p * s.mean();
    }
    let cov = linalg::spd_inverse(&linalg::symmetrize(&total_prec), "fused precision")?;
    let mean = &cov * weighted_mean;
    GaussianEstimate::new(mean, cov)
}

fn ci_fused_for(
    sources: &[GaussianEstimate],
    precs: &[DMatrix<f64>],
    omegas: &[f64],
) -> Result<GaussianEstimate> {
    let dim = sources[0].dim();
    let mut prec = DMatrix::zeros(dim, dim);
    let mut info = DVector::zeros(dim);
    for ((s, p), &w) in sources.iter().zip(precs).zip(omegas) {
        prec += w * p;
        info += w * (p * s.mean());
    }
    let cov = linalg::spd_inverse(&linalg::symmetrize(&prec), "CI fused precision")?;
    let mean = &cov * info;
    GaussianEstimate::new(mean, cov)
}

fn mixed_precision_trace(precs: &[DMatrix<f64>], omegas: &[f64], objective: WeightObjective) -> f64 {
    let dim = precs[0].nrows();
    let mut prec = DMatrix::zeros(dim, dim);
    for (p, &w) in precs.iter().zip(omegas) {
        prec += w * p;
    }
    match nalgebra::Cholesky::new(linalg::symmetrize(&prec)) {
        Some(chol) => match objective {
            WeightObjective::Trace => chol.inverse().trace(),
            WeightObjective::LogDet => {
                let l = chol.l();
                -2.0 * (0..dim).map(|i| l[(i, i)].ln()).sum::<f64>()
            }
        },
        None => f64::INFINITY,
    }
}

/// Covariance Intersection: Σ̂^{-1} = Σ_s ω_s Σ_s^{-1} with convex ω chosen to
/// minimize the trace of Σ̂. Consistent for any unknown cross-correlation.
pub fn fuse_ci(sources: &[GaussianEstimate]) -> Result<(GaussianEstimate, FusionWeights)> {
    check_sources(sources, 2)?;
    let precs = precisions(sources)?;
    let n_sources = sources.len();

    // flat objective (equal covariances) resolves to uniform weights
    if all_covs_equal(sources) {
        let weights = FusionWeights::new(vec![1.0 / n_sources as f64; n_sources])?;
        let fused = ci_fused_for(sources, &precs, weights.omegas())?;
        return Ok((fused, weights));
    }

    let omegas = if n_sources == 2 {
        let f = |w: f64| mixed_precision_trace(&precs, &[w, 1.0 - w], WeightObjective::Trace);
        let w = optim::minimize_scalar(f, 0.0, 1.0, OMEGA_GRID, OMEGA_TOL);
        vec![w, 1.0 - w]
    } else {
        // softmax parameterization keeps the search unconstrained on the simplex
        let f = |z: &[f64]| {
            mixed_precision_trace(&precs, &softmax(z), WeightObjective::Trace)
        };
        let max_iters = 200 * n_sources;
        let result = optim::nelder_mead(f, &vec![0.0; n_sources], 0.5, max_iters, 1e-14);
        if !result.converged {
            return Err(Error::NonConvergence {
                context: "CI weight search",
                iterations: result.iterations,
                best: result.fx,
            });
        }
        softmax(&result.x)
    };

    let weights = FusionWeights::new(omegas)?;
    let fused = ci_fused_for(sources, &precs, weights.omegas())?;
    Ok((fused, weights))
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

struct IciParts {
    cov: DMatrix<f64>,
    gain_a: DMatrix<f64>,
    gain_b: DMatrix<f64>,
    min_prec_eig: f64,
}

fn ici_parts(a: &GaussianEstimate, b: &GaussianEstimate, omega: f64) -> Result<IciParts> {
    let prec_a = linalg::spd_inverse(a.cov(), "ICI source covariance")?;
    let prec_b = linalg::spd_inverse(b.cov(), "ICI source covariance")?;
    let mix = omega * a.cov() + (1.0 - omega) * b.cov();
    let mix_inv = linalg::spd_inverse(&mix, "ICI covariance mixture")?;
    let prec = linalg::symmetrize(&(&prec_a + &prec_b - &mix_inv));
    let min_prec_eig = linalg::min_eigenvalue(&prec);
    if min_prec_eig <= 0.0 {
        return Ok(IciParts {
            cov: DMatrix::zeros(prec.nrows(), prec.ncols()),
            gain_a: DMatrix::zeros(prec.nrows(), prec.ncols()),
            gain_b: DMatrix::zeros(prec.nrows(), prec.ncols()),
            min_prec_eig,
        });
    }
    let cov = linalg::spd_inverse(&prec, "ICI fused precision")?;
    // mean gains C_a, C_b satisfy C_a + C_b = I
    let gain_a = &cov * (&prec_a - omega * &mix_inv);
    let gain_b = &cov * (&prec_b - (1.0 - omega) * &mix_inv);
    Ok(IciParts {
        cov,
        gain_a,
        gain_b,
        min_prec_eig,
    })
}

/// Inverse Covariance Intersection of two estimates:
/// Σ̂^{-1} = Σ_a^{-1} + Σ_b^{-1} − (ωΣ_a + (1−ω)Σ_b)^{-1}, ω minimizing the
/// fused trace. Errors when no PD fused precision exists (the tight estimate
/// "does not exist" case).
pub fn fuse_ici_pair(
    a: &GaussianEstimate,
    b: &GaussianEstimate,
) -> Result<(GaussianEstimate, FusionWeights)> {
    fuse_ici_pair_with(a, b, WeightObjective::Trace)
}

/// [`fuse_ici_pair`] with an explicit ω objective (trace by default;
/// log-determinant available as an alternative).
pub fn fuse_ici_pair_with(
    a: &GaussianEstimate,
    b: &GaussianEstimate,
    objective: WeightObjective,
) -> Result<(GaussianEstimate, FusionWeights)> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "ICI pair dimensions",
            got: b.dim(),
            expected: a.dim(),
        });
    }
    let score = |omega: f64| -> f64 {
        match ici_parts(a, b, omega) {
            Ok(parts) if parts.min_prec_eig > 0.0 => match objective {
                WeightObjective::Trace => parts.cov.trace(),
                WeightObjective::LogDet => linalg::spd_log_det(&parts.cov, "ICI cov")
                    .unwrap_or(f64::INFINITY),
            },
            _ => f64::INFINITY,
        }
    };
    let omega = optim::minimize_scalar(score, 0.0, 1.0, OMEGA_GRID, OMEGA_TOL);
    let parts = ici_parts(a, b, omega)?;
    if parts.min_prec_eig <= 0.0 {
        return Err(Error::NoTightEstimate {
            min_eig: parts.min_prec_eig,
        });
    }
    let mean = &parts.gain_a * a.mean() + &parts.gain_b * b.mean();
    let fused = GaussianEstimate::new(mean, parts.cov)?;
    Ok((fused, FusionWeights::new(vec![omega, 1.0 - omega])?))
}

/// Multi-source ICI fusion with the pairwise fold order retained.
#[derive(Debug, Clone)]
pub struct IciFused {
    pub estimate: GaussianEstimate,
    /// Source indices in the order they were folded in.
    pub order: Vec<usize>,
}

/// Recursive (left-fold, input order) pairwise ICI over two or more sources.
pub fn fuse_ici(sources: &[GaussianEstimate]) -> Result<IciFused> {
    check_sources(sources, 2)?;
    let mut acc = sources[0].clone();
    for s in &sources[1..] {
        acc = fuse_ici_pair(&acc, s)?.0;
    }
    Ok(IciFused {
        estimate: acc,
        order: (0..sources.len()).collect(),
    })
}

fn cu_slack(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    sources: &[GaussianEstimate],
) -> f64 {
    let mut worst = f64::INFINITY;
    for s in sources {
        let d = mean - s.mean();
        let gap = cov - s.cov() - &d * d.transpose();
        worst = worst.min(linalg::min_eigenvalue(&linalg::symmetrize(&gap)));
    }
    worst
}

/// Covariance Union: minimize det Σ̂ subject to
/// Σ̂ ⪰ Σ̂_s + (μ̂−μ̂_s)(μ̂−μ̂_s)' for every source, via an exact-penalty
/// scheme (log-det objective + ρ·max(0,−slack)², ρ doubling) with Nelder-Mead
/// inner minimization over x = [μ̂, upper triangle of Σ̂].
pub fn fuse_cu(sources: &[GaussianEstimate], opts: &CuOptions) -> Result<CUSolution> {
    let dim = check_sources(sources, 2)?;

    // The penalty schedule and simplex steps assume O(1) data, while the
    // feasible set and the arg-min are exactly equivariant under rescaling:
    // solve in units where the average variance plus mean spread is one,
    // then map the solution back.
    let original = sources;
    let s = sources.len() as f64;
    let mut mean_bar = DVector::zeros(dim);
    for e in sources {
        mean_bar += e.mean();
    }
    mean_bar /= s;
    let avg_var = sources.iter().map(|e| e.cov().trace()).sum::<f64>() / (s * dim as f64);
    let spread = sources
        .iter()
        .map(|e| (e.mean() - &mean_bar).norm_squared())
        .sum::<f64>()
        / (s * dim as f64);
    let scale = (avg_var + spread).sqrt();
    let normalized: Vec<GaussianEstimate> = sources
        .iter()
        .map(|e| GaussianEstimate::new(e.mean() / scale, e.cov() / (scale * scale)))
        .collect::<Result<_>>()?;
    let sources = normalized.as_slice();

    // start from the PW mean with an inflated copy of the widest source
    let mean0 = fuse_pw(sources)?.mean().clone();
    let base = sources
        .iter()
        .map(|s| s.cov())
        .max_by(|a, b| a.trace().total_cmp(&b.trace()))
        .unwrap()
        .clone();
    let mut alpha = 1.0;
    while cu_slack(&mean0, &(alpha * &base), sources) < 0.0 {
        alpha *= 2.0;
        if alpha > 1e8 {
            return Err(Error::Infeasible(
                "covariance union could not inflate a feasible starting covariance".into(),
            ));
        }
    }

    let mut x: Vec<f64> = mean0.iter().copied().collect();
    x.extend(linalg::pack_upper_triangle(&(alpha * &base)));
    let n_params = x.len();

    let objective = |x: &[f64], rho: f64| -> f64 {
        let mean = DVector::from_column_slice(&x[..dim]);
        let cov = linalg::unpack_upper_triangle(&x[dim..], dim);
        let log_det = match nalgebra::Cholesky::new(cov.clone()) {
            Some(chol) => {
                let l = chol.l();
                2.0 * (0..dim).map(|i| l[(i, i)].ln()).sum::<f64>()
            }
            None => return f64::INFINITY,
        };
        let slack = cu_slack(&mean, &cov, sources);
        log_det + rho * slack.min(0.0).powi(2)
    };

    // log det of the candidate after inflating it back onto the feasible
    // side; this is the quantity the caller receives, so stage-to-stage
    // stability of it is the right stopping signal for the ρ escalation
    let patched_log_det = |x: &[f64]| -> f64 {
        let mean = DVector::from_column_slice(&x[..dim]);
        let cov = linalg::unpack_upper_triangle(&x[dim..], dim);
        let slack = cu_slack(&mean, &cov, sources);
        let patched = cov + DMatrix::identity(dim, dim) * (-slack).max(0.0);
        match nalgebra::Cholesky::new(patched) {
            Some(chol) => {
                let l = chol.l();
                2.0 * (0..dim).map(|i| l[(i, i)].ln()).sum::<f64>()
            }
            None => f64::INFINITY,
        }
    };

    let mut rho = opts.rho_init;
    let mut prev_value = f64::INFINITY;
    let mut first_stage = true;
    while rho <= opts.rho_max {
        // the first stage explores from scratch; later ones only track the
        // O(1/ρ) drift of the penalized optimum, so they restart from a
        // much tighter simplex
        let step = if first_stage { 0.2 } else { 0.02 };
        let result = optim::nelder_mead(
            |v| objective(v, rho),
            &x,
            step,
            opts.inner_iters_per_dim * n_params,
            opts.f_tol,
        );
        x = result.x;
        rho *= 2.0;

        let value = patched_log_det(&x);
        if !first_stage && (value - prev_value).abs() <= 1e-7 * (1.0 + value.abs()) {
            break;
        }
        prev_value = value;
        first_stage = false;
    }

    let mean = DVector::from_column_slice(&x[..dim]) * scale;
    let mut cov = linalg::unpack_upper_triangle(&x[dim..], dim) * (scale * scale);
    let mut slack = cu_slack(&mean, &cov, original);
    if slack < 0.0 {
        // the quadratic penalty leaves O(1/ρ) violation; restore feasibility
        // exactly by inflating along the identity
        cov += DMatrix::identity(dim, dim) * (-slack + 1e-12);
        slack = cu_slack(&mean, &cov, original);
    }

    let chol = linalg::spd_cholesky(&cov, "CU fused covariance")?;
    let objective_value = chol.determinant();
    Ok(CUSolution {
        estimate: GaussianEstimate::new(mean, cov)?,
        objective: objective_value,
        constraint_slack: slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn est(mean: DVector<f64>, cov: DMatrix<f64>) -> GaussianEstimate {
        GaussianEstimate::new(mean, cov).unwrap()
    }

    #[test]
    fn pw_single_source_is_identity() {
        let e = est(dvector![1.0, 2.0], dmatrix![2.0, 0.3; 0.3, 1.0]);
        let fused = fuse_pw(std::slice::from_ref(&e)).unwrap();
        assert_relative_eq!(fused.mean(), e.mean(), epsilon = 1e-12);
        assert_relative_eq!(fused.cov(), e.cov(), epsilon = 1e-12);
    }

    #[test]
    fn pw_equal_precision_averages() {
        let a = est(dvector![1.0], dmatrix![1.0]);
        let b = est(dvector![3.0], dmatrix![1.0]);
        let fused = fuse_pw(&[a, b]).unwrap();
        assert_relative_eq!(fused.mean()[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(fused.cov()[(0, 0)], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn pw_two_dimensional_example() {
        let a = est(dvector![0.0, 0.0], dmatrix![1.0, 0.0; 0.0, 4.0]);
        let b = est(dvector![1.0, 1.0], dmatrix![4.0, 0.0; 0.0, 1.0]);
        let fused = fuse_pw(&[a, b]).unwrap();
        assert_relative_eq!(fused.mean()[0], 0.2, epsilon = 1e-10);
        assert_relative_eq!(fused.mean()[1], 0.8, epsilon = 1e-10);
        assert_relative_eq!(fused.cov()[(0, 0)], 0.8, epsilon = 1e-9);
        assert_relative_eq!(fused.cov()[(1, 1)], 0.8, epsilon = 1e-9);
    }

    #[test]
    fn pw_rejects_empty_input() {
        assert!(fuse_pw(&[]).is_err());
    }

    #[test]
    fn pw_trace_never_exceeds_sources() {
        let a = est(dvector![0.0, 0.0], dmatrix![1.0, 0.4; 0.4, 2.0]);
        let b = est(dvector![0.5, -0.5], dmatrix![3.0, -0.2; -0.2, 0.7]);
        let fused = fuse_pw(&[a.clone(), b.clone()]).unwrap();
        assert!(fused.cov().trace() <= a.cov().trace() + 1e-12);
        assert!(fused.cov().trace() <= b.cov().trace() + 1e-12);
    }

    #[test]
    fn ci_identical_sources_returns_source_and_uniform_weights() {
        let e = est(dvector![0.5, -0.5], dmatrix![1.5, 0.2; 0.2, 0.9]);
        let (fused, w) = fuse_ci(&[e.clone(), e.clone(), e.clone()]).unwrap();
        for &omega in w.omegas() {
            assert_relative_eq!(omega, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_relative_eq!(fused.mean(), e.mean(), epsilon = 1e-10);
        assert_relative_eq!(fused.cov(), e.cov(), epsilon = 1e-8);
    }

    #[test]
    fn ci_one_dimensional_selects_smaller_variance() {
        let a = est(dvector![1.0], dmatrix![1.0]);
        let b = est(dvector![5.0], dmatrix![4.0]);
        let (fused, w) = fuse_ci(&[a, b]).unwrap();
        assert!(w.omegas()[0] > 1.0 - 1e-6);
        assert_relative_eq!(fused.cov()[(0, 0)], 1.0, epsilon = 1e-5);
        assert_relative_eq!(fused.mean()[0], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn ci_symmetric_two_dimensional_case() {
        let a = est(dvector![0.0, 0.0], dmatrix![1.0, 0.0; 0.0, 4.0]);
        let b = est(dvector![0.0, 0.0], dmatrix![4.0, 0.0; 0.0, 1.0]);
        let (fused, w) = fuse_ci(&[a, b]).unwrap();
        assert_relative_eq!(w.omegas()[0], 0.5, epsilon = 1e-6);
        assert_relative_eq!(fused.cov()[(0, 0)], 1.6, epsilon = 1e-6);
        assert_relative_eq!(fused.cov()[(1, 1)], 1.6, epsilon = 1e-6);
    }

    #[test]
    fn ci_trace_beats_simplex_grid() {
        let a = est(dvector![0.1, 0.0], dmatrix![2.0, 0.5; 0.5, 1.0]);
        let b = est(dvector![0.0, 0.2], dmatrix![1.0, -0.3; -0.3, 3.0]);
        let (fused, _) = fuse_ci(&[a.clone(), b.clone()]).unwrap();
        let precs = precisions(&[a, b]).unwrap();
        for i in 0..=100 {
            let w = i as f64 / 100.0;
            let grid_trace = mixed_precision_trace(&precs, &[w, 1.0 - w], WeightObjective::Trace);
            assert!(fused.cov().trace() <= grid_trace + 1e-9);
        }
    }

    #[test]
    fn ci_three_sources_on_softmax_simplex() {
        let a = est(dvector![0.0, 0.0], dmatrix![4.0, 0.0; 0.0, 1.0]);
        let b = est(dvector![0.0, 0.0], dmatrix![1.0, 0.0; 0.0, 4.0]);
        let c = est(dvector![0.0, 0.0], dmatrix![2.0, 0.8; 0.8, 2.0]);
        let (fused, w) = fuse_ci(&[a.clone(), b.clone(), c.clone()]).unwrap();
        assert_relative_eq!(w.omegas().iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        // fused trace no worse than a barycentric grid over the 3-simplex
        let precs = precisions(&[a, b, c]).unwrap();
        let steps = 20;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let w0 = i as f64 / steps as f64;
                let w1 = j as f64 / steps as f64;
                let grid = mixed_precision_trace(
                    &precs,
                    &[w0, w1, 1.0 - w0 - w1],
                    WeightObjective::Trace,
                );
                assert!(fused.cov().trace() <= grid + 1e-7);
            }
        }
    }

    #[test]
    fn ici_equal_sources_fuse_to_themselves() {
        let e = est(dvector![0.7], dmatrix![2.0]);
        let (fused, _) = fuse_ici_pair(&e, &e).unwrap();
        assert_relative_eq!(fused.mean()[0], 0.7, epsilon = 1e-10);
        assert_relative_eq!(fused.cov()[(0, 0)], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn ici_one_dimensional_weight_and_mean() {
        // variances 1 and 2: fused precision 1.5 − 1/(2−ω) is maximized at ω=0,
        // giving unit variance and all mean weight on the tighter source
        let a = est(dvector![0.3], dmatrix![1.0]);
        let b = est(dvector![-0.9], dmatrix![2.0]);
        let (fused, w) = fuse_ici_pair(&a, &b).unwrap();
        assert!(w.omegas()[0] < 1e-6, "omega = {:?}", w.omegas());
        assert_relative_eq!(fused.cov()[(0, 0)], 1.0, epsilon = 1e-6);
        assert_relative_eq!(fused.mean()[0], 0.3, epsilon = 1e-6);
    }

    #[test]
    fn ici_mean_gains_sum_to_identity() {
        let a = est(dvector![0.2, -0.1], dmatrix![1.3, 0.4; 0.4, 2.2]);
        let b = est(dvector![-0.5, 0.6], dmatrix![2.0, -0.6; -0.6, 1.1]);
        let omega = 0.37;
        let parts = ici_parts(&a, &b, omega).unwrap();
        let sum = &parts.gain_a + &parts.gain_b;
        assert_relative_eq!(sum, DMatrix::identity(2, 2), epsilon = 1e-9);
    }

    #[test]
    fn ici_fold_matches_manual_chain() {
        let a = est(dvector![0.0], dmatrix![1.0]);
        let b = est(dvector![1.0], dmatrix![2.0]);
        let c = est(dvector![2.0], dmatrix![3.0]);
        let folded = fuse_ici(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let (ab, _) = fuse_ici_pair(&a, &b).unwrap();
        let (abc, _) = fuse_ici_pair(&ab, &c).unwrap();
        assert_relative_eq!(folded.estimate.mean(), abc.mean(), epsilon = 1e-12);
        assert_relative_eq!(folded.estimate.cov(), abc.cov(), epsilon = 1e-12);
        assert_eq!(folded.order, vec![0, 1, 2]);
    }

    #[test]
    fn ici_three_identical_sources_idempotent() {
        let e = est(dvector![0.4], dmatrix![1.5]);
        let fused = fuse_ici(&[e.clone(), e.clone(), e.clone()]).unwrap();
        assert_relative_eq!(fused.estimate.mean()[0], 0.4, epsilon = 1e-8);
        assert_relative_eq!(fused.estimate.cov()[(0, 0)], 1.5, epsilon = 1e-6);
    }

    #[test]
    fn cu_identical_sources_recover_the_source() {
        let e = est(dvector![1.0, -1.0], dmatrix![2.0, 0.5; 0.5, 1.0]);
        let sol = fuse_cu(&[e.clone(), e.clone()], &CuOptions::default()).unwrap();
        assert!(sol.constraint_slack >= -1e-8);
        assert_relative_eq!(sol.estimate.mean()[0], 1.0, epsilon = 2e-3);
        assert_relative_eq!(sol.estimate.mean()[1], -1.0, epsilon = 2e-3);
        assert_relative_eq!(sol.estimate.cov()[(0, 0)], 2.0, epsilon = 1e-2);
        assert_relative_eq!(sol.estimate.cov()[(1, 1)], 1.0, epsilon = 1e-2);
    }

    #[test]
    fn cu_symmetric_one_dimensional_case() {
        let a = est(dvector![0.0], dmatrix![1.0]);
        let b = est(dvector![2.0], dmatrix![1.0]);
        let sol = fuse_cu(&[a, b], &CuOptions::default()).unwrap();
        assert!(sol.constraint_slack >= -1e-8);
        assert_relative_eq!(sol.estimate.mean()[0], 1.0, epsilon = 1e-3);
        assert_relative_eq!(sol.estimate.cov()[(0, 0)], 2.0, epsilon = 5e-3);
    }

    #[test]
    fn cu_dominated_source_binds() {
        let a = est(dvector![0.0], dmatrix![1.0]);
        let b = est(dvector![0.0], dmatrix![9.0]);
        let sol = fuse_cu(&[a, b], &CuOptions::default()).unwrap();
        assert!(sol.constraint_slack >= -1e-8);
        assert_relative_eq!(sol.estimate.mean()[0], 0.0, epsilon = 1e-3);
        assert_relative_eq!(sol.estimate.cov()[(0, 0)], 9.0, epsilon = 5e-2);
    }

    #[test]
    fn cu_is_scale_equivariant() {
        // scaling means by s and covariances by s² must scale the union the
        // same way; market-sized inputs (variances ~1e-3) go through the
        // identical normalized solve as their O(1) counterparts
        let unit = [
            est(dvector![0.5, -0.1], dmatrix![0.4, 0.1; 0.1, 0.9]),
            est(dvector![0.2, 0.3], dmatrix![0.9, -0.2; -0.2, 0.3]),
        ];
        let base = fuse_cu(&unit, &CuOptions::default()).unwrap();
        for s in [0.05_f64, 40.0] {
            let scaled: Vec<GaussianEstimate> = unit
                .iter()
                .map(|e| est(e.mean() * s, e.cov() * s * s))
                .collect();
            let sol = fuse_cu(&scaled, &CuOptions::default()).unwrap();
            assert!(sol.constraint_slack >= -1e-8);
            // the solver sees the same normalized problem up to the last
            // ulp, so solutions agree to optimizer tolerance, not fp
            assert_relative_eq!(
                sol.estimate.mean(),
                &(base.estimate.mean() * s),
                epsilon = 5e-3 * s
            );
            assert_relative_eq!(
                sol.estimate.cov(),
                &(base.estimate.cov() * s * s),
                epsilon = 5e-3 * s * s
            );
            let det_ratio =
                sol.estimate.cov().determinant() / (base.estimate.cov().determinant() * s.powi(4));
            assert!(
                (det_ratio - 1.0).abs() < 1e-2,
                "objective drifted across scales: ratio {det_ratio}"
            );
        }
    }

    #[test]
    fn fusion_weights_validate_sum() {
        assert!(FusionWeights::new(vec![0.6, 0.6]).is_err());
        assert!(FusionWeights::new(vec![0.6, 0.4]).is_ok());
    }
}
