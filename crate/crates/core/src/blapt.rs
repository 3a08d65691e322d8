//! The Bayesian factor-model allocation chain: absolute views on factor risk
//! premia are combined with a Gaussian prior, pushed through the factor model
//! into a predictive distribution over asset returns, and turned into
//! mean-variance weights.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fusion::{self, CuOptions};
use crate::gaussian::GaussianEstimate;
use crate::linalg;

/// Condition-number ceiling for the inner k×k system of the predictive
/// formulas; beyond this the result is numerically meaningless.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Linear factor model r = X f + ε with diagonal idiosyncratic covariance D
/// (stored as its diagonal) and factor covariance F.
///
/// Downstream regression requires X to have full column rank; construction
/// does not enforce it (the predictive formulas stay well-posed without it,
/// e.g. for a zero-exposure sanity case) — rank is checked where it matters.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub exposures: DMatrix<f64>,
    pub idio: DVector<f64>,
    pub factor_cov: DMatrix<f64>,
}

impl FactorModel {
    pub fn new(exposures: DMatrix<f64>, idio: DVector<f64>, factor_cov: DMatrix<f64>) -> Result<Self> {
        let (n, k) = exposures.shape();
        if idio.len() != n {
            return Err(Error::DimensionMismatch {
                context: "idiosyncratic diagonal vs asset count",
                got: idio.len(),
                expected: n,
            });
        }
        if idio.iter().any(|&d| d <= 0.0) {
            return Err(Error::InvalidArgument(
                "idiosyncratic variances must be strictly positive".into(),
            ));
        }
        let factor_cov = linalg::check_symmetric(&factor_cov)?;
        if factor_cov.nrows() != k {
            return Err(Error::DimensionMismatch {
                context: "factor covariance vs factor count",
                got: factor_cov.nrows(),
                expected: k,
            });
        }
        let min_eig = linalg::min_eigenvalue(&factor_cov);
        if min_eig <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eig });
        }
        Ok(Self {
            exposures,
            idio,
            factor_cov,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.exposures.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.exposures.ncols()
    }
}

/// Absolute views on the k factor premia: estimates q with strictly positive
/// diagonal uncertainties Ω.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub q: DVector<f64>,
    pub omega: DVector<f64>,
}

impl ViewSet {
    pub fn new(q: DVector<f64>, omega: DVector<f64>) -> Result<Self> {
        if q.len() != omega.len() {
            return Err(Error::DimensionMismatch {
                context: "view means vs uncertainties",
                got: omega.len(),
                expected: q.len(),
            });
        }
        if omega.iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidArgument(
                "view uncertainties must be strictly positive".into(),
            ));
        }
        Ok(Self { q, omega })
    }
}

/// One source's views together with its aleatoric factor covariance F.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceViews {
    pub views: ViewSet,
    pub factor_cov: DMatrix<f64>,
}

impl SourceViews {
    pub fn new(views: ViewSet, factor_cov: DMatrix<f64>) -> Result<Self> {
        let factor_cov = linalg::check_symmetric(&factor_cov)?;
        if factor_cov.nrows() != views.q.len() {
            return Err(Error::DimensionMismatch {
                context: "source factor covariance vs view count",
                got: factor_cov.nrows(),
                expected: views.q.len(),
            });
        }
        Ok(Self { views, factor_cov })
    }
}

/// Gaussian prior N(ξ, V) over the factor risk premia.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    pub xi: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl Prior {
    pub fn new(xi: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        let v = linalg::check_symmetric(&v)?;
        if v.nrows() != xi.len() {
            return Err(Error::DimensionMismatch {
                context: "prior covariance vs mean length",
                got: v.nrows(),
                expected: xi.len(),
            });
        }
        let min_eig = linalg::min_eigenvalue(&v);
        if min_eig <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eig });
        }
        Ok(Self { xi, v })
    }
}

/// Which fusion rule combines the per-source predictive factor estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuseMethod {
    Pw,
    Ci,
    Ici,
    Cu,
    /// Use a single source (by index) with no fusion.
    Single(usize),
}

impl std::fmt::Display for FuseMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FuseMethod::Pw => write!(f, "pw"),
            FuseMethod::Ci => write!(f, "ci"),
            FuseMethod::Ici => write!(f, "ici"),
            FuseMethod::Cu => write!(f, "cu"),
            FuseMethod::Single(i) => write!(f, "single:{i}"),
        }
    }
}

impl std::str::FromStr for FuseMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pw" => Ok(FuseMethod::Pw),
            "ci" => Ok(FuseMethod::Ci),
            "ici" => Ok(FuseMethod::Ici),
            "cu" => Ok(FuseMethod::Cu),
            other => match other.strip_prefix("single:") {
                Some(idx) => idx
                    .parse::<usize>()
                    .map(FuseMethod::Single)
                    .map_err(|_| Error::InvalidArgument(format!("bad source index in '{other}'"))),
                None => Err(Error::InvalidArgument(format!(
                    "unknown fuse method '{other}' (expected pw|ci|ici|cu|single:<index>)"
                ))),
            },
        }
    }
}

/// Posterior over factor premia given prior N(ξ, V) and views (q, Ω):
/// cov = (V^{-1} + Ω^{-1})^{-1}, mean = cov·(V^{-1}ξ + Ω^{-1}q).
pub fn posterior_theta(prior: &Prior, views: &ViewSet) -> Result<GaussianEstimate> {
    let k = prior.xi.len();
    if views.q.len() != k {
        return Err(Error::DimensionMismatch {
            context: "views vs prior dimension",
            got: views.q.len(),
            expected: k,
        });
    }
    let v_chol = linalg::spd_cholesky(&prior.v, "prior covariance")?;
    let omega_inv = views.omega.map(|w| 1.0 / w);
    let precision = linalg::symmetrize(&(v_chol.inverse() + DMatrix::from_diagonal(&omega_inv)));
    let h_chol = linalg::spd_cholesky(&precision, "posterior precision")?;
    let info = v_chol.solve(&prior.xi) + omega_inv.component_mul(&views.q);
    let mean = h_chol.solve(&info);
    GaussianEstimate::new(mean, h_chol.inverse())
}

/// Predictive factor distribution: the posterior mean with aleatoric factor
/// covariance F added on (convolution of independent Gaussians).
pub fn predictive_factors(post: &GaussianEstimate, f_cov: &DMatrix<f64>) -> Result<GaussianEstimate> {
    let f_cov = linalg::check_symmetric(f_cov)?;
    if f_cov.nrows() != post.dim() {
        return Err(Error::DimensionMismatch {
            context: "aleatoric factor covariance vs posterior dimension",
            got: f_cov.nrows(),
            expected: post.dim(),
        });
    }
    GaussianEstimate::new(post.mean().clone(), post.cov() + f_cov)
}

struct PredictiveCore {
    /// D^{-1}X, n×k.
    scaled_exposures: DMatrix<f64>,
    /// (X'D^{-1}X + M^{-1})^{-1}, k×k.
    inner_inv: DMatrix<f64>,
    /// M^{-1}·E(f|q).
    m_inv_mean: DVector<f64>,
    d_inv: DVector<f64>,
}

fn predictive_core(fm: &FactorModel, fq: &GaussianEstimate) -> Result<PredictiveCore> {
    let k = fm.n_factors();
    if fq.dim() != k {
        return Err(Error::DimensionMismatch {
            context: "predictive factor estimate vs model factor count",
            got: fq.dim(),
            expected: k,
        });
    }
    let d_inv = fm.idio.map(|d| 1.0 / d);
    let mut scaled_exposures = fm.exposures.clone();
    for i in 0..fm.n_assets() {
        scaled_exposures.row_mut(i).scale_mut(d_inv[i]);
    }
    let m_chol = linalg::spd_cholesky(fq.cov(), "predictive factor covariance")?;
    let inner = linalg::symmetrize(
        &(fm.exposures.transpose() * &scaled_exposures + m_chol.inverse()),
    );
    let condition = linalg::condition_number(&inner);
    if condition > CONDITION_LIMIT {
        return Err(Error::IllConditioned {
            context: "predictive inner system",
            condition,
            limit: CONDITION_LIMIT,
        });
    }
    let inner_inv = linalg::spd_cholesky(&inner, "predictive inner system")?.inverse();
    Ok(PredictiveCore {
        scaled_exposures,
        inner_inv,
        m_inv_mean: m_chol.solve(fq.mean()),
        d_inv,
    })
}

/// Predictive asset-return distribution given the factor model and a fused
/// predictive factor estimate (mean E(f|q), covariance M):
/// cov = [D^{-1} − D^{-1}X (X'D^{-1}X + M^{-1})^{-1} X'D^{-1}]^{-1},
/// mean = cov · D^{-1}X (X'D^{-1}X + M^{-1})^{-1} M^{-1} E(f|q).
pub fn predictive_returns(fm: &FactorModel, fq: &GaussianEstimate) -> Result<GaussianEstimate> {
    let core = predictive_core(fm, fq)?;
    let n = fm.n_assets();
    let mut precision = -(&core.scaled_exposures * &core.inner_inv * core.scaled_exposures.transpose());
    for i in 0..n {
        precision[(i, i)] += core.d_inv[i];
    }
    let p_chol = linalg::spd_cholesky(&linalg::symmetrize(&precision), "predictive return precision")?;
    let cov = p_chol.inverse();
    let mean = p_chol.solve(&(&core.scaled_exposures * (&core.inner_inv * &core.m_inv_mean)));
    GaussianEstimate::new(mean, cov)
}

/// Single-step optimal weights
/// h* = γ^{-1} D^{-1}X (X'D^{-1}X + M^{-1})^{-1} M^{-1} E(f|q),
/// the closed form of γ^{-1}·var(r|q)^{-1}·E(r|q).
pub fn optimal_weights_bl(fm: &FactorModel, fq: &GaussianEstimate, gamma: f64) -> Result<DVector<f64>> {
    if gamma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "risk aversion must be positive, got {gamma}"
        )));
    }
    let core = predictive_core(fm, fq)?;
    Ok(&core.scaled_exposures * (&core.inner_inv * &core.m_inv_mean) / gamma)
}

/// Full chain for one rebalance: per-source posterior and predictive factor
/// estimates, state-level fusion, then optimal weights. Returns the fused
/// predictive factor estimate alongside the weights.
pub fn bl_pipeline(
    prior: &Prior,
    views_per_source: &[SourceViews],
    fm: &FactorModel,
    fuse_method: FuseMethod,
    gamma: f64,
) -> Result<(GaussianEstimate, DVector<f64>)> {
    bl_pipeline_with(prior, views_per_source, fm, fuse_method, gamma, &CuOptions::default())
}

/// [`bl_pipeline`] with explicit covariance-union solver options.
pub fn bl_pipeline_with(
    prior: &Prior,
    views_per_source: &[SourceViews],
    fm: &FactorModel,
    fuse_method: FuseMethod,
    gamma: f64,
    cu_opts: &CuOptions,
) -> Result<(GaussianEstimate, DVector<f64>)> {
    if views_per_source.is_empty() {
        return Err(Error::InsufficientData {
            context: "view sources",
            got: 0,
            need: 1,
        });
    }
    let per_source: Vec<GaussianEstimate> = views_per_source
        .iter()
        .map(|sv| {
            let post = posterior_theta(prior, &sv.views)?;
            predictive_factors(&post, &sv.factor_cov)
        })
        .collect::<Result<_>>()?;

    let fused = match fuse_method {
        FuseMethod::Single(idx) => per_source
            .get(idx)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("source index {idx} out of range")))?,
        _ if per_source.len() == 1 => per_source[0].clone(),
        FuseMethod::Pw => fusion::fuse_pw(&per_source)?,
        FuseMethod::Ci => fusion::fuse_ci(&per_source)?.0,
        FuseMethod::Ici => fusion::fuse_ici(&per_source)?.estimate,
        FuseMethod::Cu => fusion::fuse_cu(&per_source, cu_opts)?.estimate,
    };

    let weights = optimal_weights_bl(fm, &fused, gamma)?;
    Ok((fused, weights))
}

// ---- JSON representations ----

#[derive(Serialize, Deserialize)]
struct FactorModelRepr {
    exposures: Vec<Vec<f64>>,
    idio: Vec<f64>,
    factor_cov: Vec<Vec<f64>>,
}

impl Serialize for FactorModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        FactorModelRepr {
            exposures: linalg::mat_to_rows(&self.exposures),
            idio: self.idio.iter().copied().collect(),
            factor_cov: linalg::mat_to_rows(&self.factor_cov),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FactorModel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = FactorModelRepr::deserialize(deserializer)?;
        let exposures = linalg::mat_from_rows(&repr.exposures).map_err(serde::de::Error::custom)?;
        let factor_cov = linalg::mat_from_rows(&repr.factor_cov).map_err(serde::de::Error::custom)?;
        FactorModel::new(exposures, DVector::from_vec(repr.idio), factor_cov)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct SourceViewsRepr {
    q: Vec<f64>,
    omega: Vec<f64>,
    factor_cov: Vec<Vec<f64>>,
}

impl Serialize for SourceViews {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        SourceViewsRepr {
            q: self.views.q.iter().copied().collect(),
            omega: self.views.omega.iter().copied().collect(),
            factor_cov: linalg::mat_to_rows(&self.factor_cov),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SourceViews {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = SourceViewsRepr::deserialize(deserializer)?;
        let views = ViewSet::new(DVector::from_vec(repr.q), DVector::from_vec(repr.omega))
            .map_err(serde::de::Error::custom)?;
        let factor_cov = linalg::mat_from_rows(&repr.factor_cov).map_err(serde::de::Error::custom)?;
        SourceViews::new(views, factor_cov).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct PriorRepr {
    xi: Vec<f64>,
    v: Vec<Vec<f64>>,
}

impl Serialize for Prior {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PriorRepr {
            xi: self.xi.iter().copied().collect(),
            v: linalg::mat_to_rows(&self.v),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Prior {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = PriorRepr::deserialize(deserializer)?;
        let v = linalg::mat_from_rows(&repr.v).map_err(serde::de::Error::custom)?;
        Prior::new(DVector::from_vec(repr.xi), v).map_err(serde::de::Error::custom)
    }
}
