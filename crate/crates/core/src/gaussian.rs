//! Gaussian estimates (mean, covariance) with the consistency predicate and
//! 2D geometry used by the fusion methods.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg;

/// Default eigenvalue tolerance for consistency checks.
pub const CONSISTENCY_TOL: f64 = 1e-8;

// Jitter policy: a min eigenvalue in (JITTER_REJECT, JITTER_CEIL] is treated
// as round-off and lifted by adding JITTER·I once; anything at or below
// JITTER_REJECT is genuinely invalid input.
const JITTER: f64 = 1e-10;
const JITTER_CEIL: f64 = 1e-12;
const JITTER_REJECT: f64 = -1e-10;

/// A multivariate Gaussian estimate: mean vector and SPD covariance.
///
/// Construction validates symmetry (within 1e-10), symmetrizes, and applies
/// the jitter policy so that the stored covariance is always positive
/// definite.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEstimate {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianEstimate {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let cov = linalg::check_symmetric(&cov)?;
        if mean.len() != cov.nrows() {
            return Err(Error::DimensionMismatch {
                context: "mean length vs covariance dimension",
                got: mean.len(),
                expected: cov.nrows(),
            });
        }
        let min_eig = linalg::min_eigenvalue(&cov);
        let cov = if min_eig > JITTER_CEIL {
            cov
        } else if min_eig > JITTER_REJECT {
            let eye = DMatrix::identity(cov.nrows(), cov.ncols());
            cov + eye * JITTER
        } else {
            return Err(Error::NotPositiveDefinite { min_eig });
        };
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }
}

/// True iff `candidate − truth` is PSD up to `tol`: its minimum eigenvalue is
/// ≥ −tol. This is the fusion notion of a covariance being "consistent with"
/// (no smaller than) a true error covariance.
pub fn is_consistent_wrt(candidate: &DMatrix<f64>, truth: &DMatrix<f64>, tol: f64) -> Result<bool> {
    let candidate = linalg::check_symmetric(candidate)?;
    let truth = linalg::check_symmetric(truth)?;
    if candidate.nrows() != truth.nrows() {
        return Err(Error::DimensionMismatch {
            context: "consistency check dimensions",
            got: truth.nrows(),
            expected: candidate.nrows(),
        });
    }
    Ok(linalg::min_eigenvalue(&(candidate - truth)) >= -tol)
}

/// sqrt((μa−μb)' (Σa+Σb)^{-1} (μa−μb)): separation of two estimates in units
/// of their pooled uncertainty.
pub fn mahalanobis_distance(a: &GaussianEstimate, b: &GaussianEstimate) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "mahalanobis estimate dimensions",
            got: b.dim(),
            expected: a.dim(),
        });
    }
    let pooled = a.cov() + b.cov();
    let diff = a.mean() - b.mean();
    let solved = linalg::spd_solve(&pooled, &diff, "mahalanobis pooled covariance")?;
    Ok(diff.dot(&solved).max(0.0).sqrt())
}

/// Points x on the locus (x−μ)'Σ^{-1}(x−μ) = 1 for a 2D estimate, ordered by
/// angle. Supports plotting fusion geometry.
pub fn concentration_ellipse(e: &GaussianEstimate, n_points: usize) -> Result<Vec<[f64; 2]>> {
    if e.dim() != 2 {
        return Err(Error::DimensionMismatch {
            context: "concentration ellipse requires dimension 2",
            got: e.dim(),
            expected: 2,
        });
    }
    if n_points < 3 {
        return Err(Error::InvalidArgument(format!(
            "ellipse needs at least 3 points, got {n_points}"
        )));
    }
    // Σ^{1/2} from the eigendecomposition maps the unit circle onto the locus.
    let eig = e.cov().clone().symmetric_eigen();
    let sqrt_cov = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();
    let mut points = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let theta = 2.0 * std::f64::consts::PI * (i as f64) / (n_points as f64);
        let unit = DVector::from_vec(vec![theta.cos(), theta.sin()]);
        let x = e.mean() + &sqrt_cov * unit;
        points.push([x[0], x[1]]);
    }
    Ok(points)
}

// JSON form: {"mean": [..], "cov": [[..], ..]} with the full row-major matrix.
#[derive(Serialize, Deserialize)]
struct GaussianEstimateRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl Serialize for GaussianEstimate {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        let repr = GaussianEstimateRepr {
            mean: self.mean.iter().copied().collect(),
            cov: (0..n)
                .map(|i| (0..n).map(|j| self.cov[(i, j)]).collect())
                .collect(),
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GaussianEstimate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = GaussianEstimateRepr::deserialize(deserializer)?;
        let n = repr.mean.len();
        if repr.cov.len() != n || repr.cov.iter().any(|row| row.len() != n) {
            return Err(serde::de::Error::custom(format!(
                "covariance must be {n}×{n} to match the mean"
            )));
        }
        let flat: Vec<f64> = repr.cov.into_iter().flatten().collect();
        GaussianEstimate::new(
            DVector::from_vec(repr.mean),
            DMatrix::from_row_slice(n, n, &flat),
        )
        .map_err(serde::de::Error::custom)
    }
}
