//! View generation: autoregressive baseline forecasts of factor risk premia
//! with an aleatoric/epistemic variance decomposition, plus CSV ingestion of
//! externally produced views.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the epistemic variance estimate.
pub const EPISTEMIC_FLOOR: f64 = 1e-8;

/// One view on one factor: a forecast mean plus its variance split into an
/// irreducible (aleatoric) part and a model-uncertainty (epistemic) part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewTriple {
    pub mean: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
    /// Set when the epistemic estimate was clipped up to the floor (the raw
    /// out-of-sample variance fell at or below the aleatoric estimate, or the
    /// out-of-sample window was empty).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clipped: bool,
}

impl ViewTriple {
    pub fn total_variance(&self) -> f64 {
        self.aleatoric + self.epistemic
    }
}

/// Least-squares AR(p) fit: coefficients on lags 1..p, an intercept, and the
/// one-step residual variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub residual_variance: f64,
}

impl ArModel {
    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    /// One-step forecast from the most recent `order()` observations
    /// (last element of `recent` = most recent).
    pub fn forecast(&self, recent: &[f64]) -> Result<f64> {
        let p = self.order();
        if recent.len() < p {
            return Err(Error::InsufficientData {
                context: "recent observations for AR forecast",
                got: recent.len(),
                need: p,
            });
        }
        let mut y = self.intercept;
        for (lag, phi) in self.coefficients.iter().enumerate() {
            y += phi * recent[recent.len() - 1 - lag];
        }
        Ok(y)
    }
}

/// Fit an AR(p) model with intercept by least squares on one-step residuals.
/// Residual variance uses the degrees-of-freedom correction
/// SSE / (len − order − 1).
pub fn fit_ar(history: &[f64], order: usize) -> Result<ArModel> {
    if order == 0 {
        return Err(Error::InvalidArgument("AR order must be at least 1".into()));
    }
    if history.len() < order + 10 {
        return Err(Error::InsufficientData {
            context: "AR fit history",
            got: history.len(),
            need: order + 10,
        });
    }
    let rows = history.len() - order;
    // design: [lag1, ..., lagp, 1]
    let x = DMatrix::from_fn(rows, order + 1, |t, j| {
        if j == order {
            1.0
        } else {
            history[order + t - 1 - j]
        }
    });
    let y = DVector::from_fn(rows, |t, _| history[order + t]);
    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    let eps = max_sv * rows.max(order + 1) as f64 * f64::EPSILON;
    let beta = svd.solve(&y, eps).map_err(|_| Error::Singular {
        context: "AR least squares (collinear lag matrix)",
        condition: f64::INFINITY,
    })?;
    let residuals = &y - &x * &beta;
    // A rank-deficient design is acceptable only when the system is
    // consistent (a deterministic series fits exactly, so the forecast is
    // unique); collinear lags plus noise leave the coefficients
    // unidentifiable.
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let consistent = residuals.norm_squared() <= 1e-10 * (1.0 + y.norm_squared());
    if !beta.iter().all(|b| b.is_finite()) || (rank < order + 1 && !consistent) {
        return Err(Error::Singular {
            context: "AR least squares (collinear lag matrix)",
            condition: if min_sv > 0.0 {
                max_sv / min_sv
            } else {
                f64::INFINITY
            },
        });
    }
    let dof = history.len() - order - 1;
    let residual_variance = residuals.norm_squared() / dof as f64;
    Ok(ArModel {
        coefficients: beta.as_slice()[..order].to_vec(),
        intercept: beta[order],
        residual_variance,
    })
}

/// Produce a view from a fitted model: one-step forecast mean, aleatoric
/// variance from the fit residuals, and epistemic variance estimated as the
/// excess of trailing out-of-sample error variance over the aleatoric part,
/// floored at [`EPISTEMIC_FLOOR`].
pub fn predict_view(model: &ArModel, recent: &[f64], oos_errors: &[f64]) -> Result<ViewTriple> {
    let mean = model.forecast(recent)?;
    let aleatoric = model.residual_variance.max(EPISTEMIC_FLOOR);
    let (epistemic, clipped) = if oos_errors.is_empty() {
        (EPISTEMIC_FLOOR, true)
    } else {
        let oos_var = population_variance(oos_errors);
        let raw = oos_var - aleatoric;
        if raw > EPISTEMIC_FLOOR {
            (raw, false)
        } else {
            (EPISTEMIC_FLOOR, true)
        }
    };
    Ok(ViewTriple {
        mean,
        aleatoric,
        epistemic,
        clipped,
    })
}

fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Split a total variance into (epistemic, aleatoric) with the epistemic part
/// floored: epistemic = max(total − aleatoric, floor).
pub fn decompose_total(total: f64, aleatoric: f64) -> Result<(f64, f64, bool)> {
    if total < 0.0 || aleatoric < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "variances must be nonnegative, got total {total}, aleatoric {aleatoric}"
        )));
    }
    let raw = total - aleatoric;
    if raw > EPISTEMIC_FLOOR {
        Ok((raw, aleatoric, false))
    } else {
        Ok((EPISTEMIC_FLOOR, aleatoric, true))
    }
}

/// A fully keyed view record as stored in the views CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub date: String,
    pub source: String,
    pub factor: String,
    pub mean: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

/// Views keyed by (date, source, factor), in file order within each key.
pub type ViewTable = BTreeMap<(String, String, String), ViewTriple>;

/// Load a views CSV (`date,source,factor,mean,aleatoric,epistemic`).
pub fn load_views(path: &Path) -> Result<ViewTable> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut table = ViewTable::new();
    for (i, row) in reader.deserialize::<ViewRecord>().enumerate() {
        let row_no = i + 2; // 1-based, after the header
        let rec = row.map_err(|e| Error::Schema {
            path: path.display().to_string(),
            row: row_no,
            message: e.to_string(),
        })?;
        if rec.aleatoric <= 0.0 {
            return Err(Error::Schema {
                path: path.display().to_string(),
                row: row_no,
                message: format!("aleatoric must be positive, got {}", rec.aleatoric),
            });
        }
        if rec.epistemic < 0.0 {
            return Err(Error::Schema {
                path: path.display().to_string(),
                row: row_no,
                message: format!("epistemic must be nonnegative, got {}", rec.epistemic),
            });
        }
        table.insert(
            (rec.date, rec.source, rec.factor),
            ViewTriple {
                mean: rec.mean,
                aleatoric: rec.aleatoric,
                epistemic: rec.epistemic,
                clipped: false,
            },
        );
    }
    Ok(table)
}

/// Write views to CSV in the schema read by [`load_views`].
pub fn save_views(path: &Path, records: &[ViewRecord]) -> Result<()> {
    crate::fsio::atomic_csv(path, |writer| {
        if records.is_empty() {
            writer.write_record(["date", "source", "factor", "mean", "aleatoric", "epistemic"])?;
        }
        for rec in records {
            writer.serialize(rec)?;
        }
        Ok(())
    })
}
