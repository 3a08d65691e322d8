//! Mean-variance allocation, with and without a quadratic market-impact
//! transaction-cost model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Market-impact cost model for one rebalance step.
///
/// `impact` is the diagonal Λ = (1/5)·L^{-1}, calibrated so that trading 1%
/// of an asset's trailing daily dollar volume L costs 10 bps of impact.
/// `realized_return_adj` is the diagonal R that drifts the previous weights
/// forward: 1 + realized step return, renormalized by the wealth ratio
/// Π_prev/Π_now.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub dollar_volume: Vec<f64>,
    pub wealth: f64,
    pub impact: Vec<f64>,
    pub realized_return_adj: Vec<f64>,
}

impl CostModel {
    /// Build the model from trailing dollar volumes, investable wealth, and
    /// the drift adjustment R; Λ is derived from L.
    pub fn new(dollar_volume: Vec<f64>, wealth: f64, realized_return_adj: Vec<f64>) -> Result<Self> {
        if wealth <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "wealth must be positive, got {wealth}"
            )));
        }
        if realized_return_adj.len() != dollar_volume.len() {
            return Err(Error::DimensionMismatch {
                context: "return adjustment vs volume length",
                got: realized_return_adj.len(),
                expected: dollar_volume.len(),
            });
        }
        let impact = impact_matrix(&dollar_volume)?;
        Ok(Self {
            dollar_volume,
            wealth,
            impact,
            realized_return_adj,
        })
    }

    /// A frictionless model: Λ = 0, R = I, unit wealth. Useful as the
    /// baseline that makes [`optimal_weights_tc`] coincide with
    /// [`markowitz_weights`].
    pub fn frictionless(n: usize) -> Self {
        Self {
            dollar_volume: vec![f64::INFINITY; n],
            wealth: 1.0,
            impact: vec![0.0; n],
            realized_return_adj: vec![1.0; n],
        }
    }

    pub fn n_assets(&self) -> usize {
        self.dollar_volume.len()
    }
}

/// Unconstrained mean-variance weights w* = (γΣ)^{-1} μ.
pub fn markowitz_weights(mu: &DVector<f64>, sigma: &DMatrix<f64>, gamma: f64) -> Result<DVector<f64>> {
    if gamma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "risk aversion must be positive, got {gamma}"
        )));
    }
    if sigma.nrows() != mu.len() {
        return Err(Error::DimensionMismatch {
            context: "covariance vs mean length",
            got: sigma.nrows(),
            expected: mu.len(),
        });
    }
    let sigma = linalg::check_symmetric(sigma)?;
    Ok(linalg::spd_solve(&sigma, mu, "mean-variance covariance")? / gamma)
}

/// Diagonal market-impact matrix Λ with entries 1/(5·L_i): a trade of one
/// percent of daily dollar volume moves the price by ten basis points.
pub fn impact_matrix(dollar_volume: &[f64]) -> Result<Vec<f64>> {
    if dollar_volume.iter().any(|&l| l <= 0.0) {
        return Err(Error::InvalidArgument(
            "dollar volumes must be strictly positive".into(),
        ));
    }
    Ok(dollar_volume.iter().map(|&l| 1.0 / (5.0 * l)).collect())
}

/// Dollar turnover Δ = Π(w − R·w_prev).
pub fn turnover(
    w: &DVector<f64>,
    w_prev: &DVector<f64>,
    realized_return_adj: &[f64],
    wealth: f64,
) -> Result<DVector<f64>> {
    if w_prev.len() != w.len() || realized_return_adj.len() != w.len() {
        return Err(Error::DimensionMismatch {
            context: "turnover inputs",
            got: w_prev.len().max(realized_return_adj.len()),
            expected: w.len(),
        });
    }
    Ok(DVector::from_fn(w.len(), |i, _| {
        wealth * (w[i] - realized_return_adj[i] * w_prev[i])
    }))
}

/// Quadratic impact cost in dollars: TC = ½ Δ'ΛΔ.
pub fn transaction_cost_dollars(delta: &DVector<f64>, impact: &[f64]) -> Result<f64> {
    if impact.len() != delta.len() {
        return Err(Error::DimensionMismatch {
            context: "impact diagonal vs turnover length",
            got: impact.len(),
            expected: delta.len(),
        });
    }
    Ok(0.5 * delta.iter().zip(impact).map(|(d, l)| l * d * d).sum::<f64>())
}

/// Cost-aware closed-form weights w = (γΣ + ΠΛ)^{-1} (μ + ΠΛ·R·w_prev).
///
/// At Λ = 0 this is the Markowitz solution; as Λ → ∞ it pins the portfolio
/// to the drifted previous holdings R·w_prev.
pub fn optimal_weights_tc(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    gamma: f64,
    cost: &CostModel,
    w_prev: &DVector<f64>,
) -> Result<DVector<f64>> {
    if gamma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "risk aversion must be positive, got {gamma}"
        )));
    }
    let n = mu.len();
    if sigma.nrows() != n || w_prev.len() != n || cost.n_assets() != n {
        return Err(Error::DimensionMismatch {
            context: "cost-aware weights inputs",
            got: sigma.nrows().max(w_prev.len()).max(cost.n_assets()),
            expected: n,
        });
    }
    if cost.impact.iter().any(|&l| l < 0.0) {
        return Err(Error::InvalidArgument(
            "impact diagonal must be nonnegative".into(),
        ));
    }
    let sigma = linalg::check_symmetric(sigma)?;
    let mut system = sigma * gamma;
    let mut rhs = mu.clone();
    for i in 0..n {
        let pin = cost.wealth * cost.impact[i];
        system[(i, i)] += pin;
        rhs[i] += pin * cost.realized_return_adj[i] * w_prev[i];
    }
    linalg::spd_solve(&system, &rhs, "cost-adjusted system")
}
