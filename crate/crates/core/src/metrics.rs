//! Performance metrics and the significance-testing battery over paired
//! per-year statistics: paired t, Wilcoxon signed-rank, and BCa bootstrap
//! confidence intervals.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::seeding::stream_rng;

/// Direction of a one-sided test on the differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    /// Mean/location of the differences is greater than zero.
    Greater,
    /// Mean/location of the differences is less than zero.
    Less,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Compounded total return over the series: Π(1+r) − 1.
pub fn cumulative_return(returns: &[f64]) -> f64 {
    returns.iter().fold(1.0, |eq, r| eq * (1.0 + r)) - 1.0
}

/// Equity after each period, starting from 1.0 (the initial point is not
/// included).
pub fn equity_curve(returns: &[f64]) -> Vec<f64> {
    let mut eq = 1.0;
    returns
        .iter()
        .map(|r| {
            eq *= 1.0 + r;
            eq
        })
        .collect()
}

/// Annualized arithmetic mean return.
pub fn annualized_return(returns: &[f64], periods_per_year: usize) -> f64 {
    mean(returns) * periods_per_year as f64
}

/// Annualized return volatility (sample standard deviation × √periods).
pub fn annualized_vol(returns: &[f64], periods_per_year: usize) -> f64 {
    sample_std(returns) * (periods_per_year as f64).sqrt()
}

/// Annualized Sharpe ratio: annualized mean / annualized volatility.
pub fn sharpe(returns: &[f64], periods_per_year: usize) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::InsufficientData {
            context: "Sharpe ratio",
            got: returns.len(),
            need: 2,
        });
    }
    let vol = annualized_vol(returns, periods_per_year);
    if vol <= 0.0 || !vol.is_finite() {
        return Err(Error::InvalidArgument(
            "Sharpe ratio undefined for zero-volatility series".into(),
        ));
    }
    Ok(annualized_return(returns, periods_per_year) / vol)
}

/// Maximum drawdown of the compounded equity curve, as a nonpositive
/// fraction: min over t of equity_t / running_max − 1.
pub fn max_drawdown(returns: &[f64]) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::InsufficientData {
            context: "max drawdown",
            got: 0,
            need: 1,
        });
    }
    let mut equity = 1.0f64;
    let mut peak = 1.0f64;
    let mut dd = 0.0f64;
    for r in returns {
        equity *= 1.0 + r;
        peak = peak.max(equity);
        dd = dd.min(equity / peak - 1.0);
    }
    Ok(dd)
}

/// Annualized Sortino ratio: annualized mean over annualized downside
/// deviation, with target 0. Downside deviation is the root mean square of
/// the negative parts, averaged over all observations.
pub fn sortino(returns: &[f64], periods_per_year: usize) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::InsufficientData {
            context: "Sortino ratio",
            got: returns.len(),
            need: 2,
        });
    }
    let downside_ms =
        returns.iter().map(|&r| r.min(0.0).powi(2)).sum::<f64>() / returns.len() as f64;
    if downside_ms <= 0.0 {
        return Err(Error::InvalidArgument(
            "Sortino ratio undefined without downside observations".into(),
        ));
    }
    let ann_downside = downside_ms.sqrt() * (periods_per_year as f64).sqrt();
    Ok(annualized_return(returns, periods_per_year) / ann_downside)
}

/// Information ratio vs a benchmark: annualized mean of the active return
/// over its annualized volatility.
pub fn information_ratio(
    strategy: &[f64],
    benchmark: &[f64],
    periods_per_year: usize,
) -> Result<f64> {
    if strategy.len() != benchmark.len() {
        return Err(Error::DimensionMismatch {
            context: "strategy vs benchmark lengths",
            got: benchmark.len(),
            expected: strategy.len(),
        });
    }
    let active: Vec<f64> = strategy.iter().zip(benchmark).map(|(s, b)| s - b).collect();
    sharpe(&active, periods_per_year)
}

/// Paired per-year differences between two labeled methods.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub labels: (String, String),
    pub diffs: Vec<f64>,
}

impl PairedSample {
    pub fn new(labels: (String, String), diffs: Vec<f64>) -> Result<Self> {
        if diffs.len() < 2 {
            return Err(Error::InsufficientData {
                context: "paired differences",
                got: diffs.len(),
                need: 2,
            });
        }
        if diffs.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidArgument(
                "paired differences must be finite".into(),
            ));
        }
        Ok(Self { labels, diffs })
    }
}

/// One-sided paired t-test p-value on the differences (n−1 degrees of
/// freedom). Zero-variance differences give the degenerate p: 0 or 1 by the
/// sign of the common value, 0.5 when every difference is exactly zero.
pub fn paired_t(sample: &PairedSample, alternative: Alternative) -> Result<f64> {
    let d = &sample.diffs;
    if d.len() < 3 {
        return Err(Error::InsufficientData {
            context: "paired t-test",
            got: d.len(),
            need: 3,
        });
    }
    let m = mean(d);
    let s = sample_std(d);
    if s == 0.0 {
        let p_greater = if m > 0.0 {
            0.0
        } else if m < 0.0 {
            1.0
        } else {
            0.5
        };
        return Ok(match alternative {
            Alternative::Greater => p_greater,
            Alternative::Less => 1.0 - p_greater,
        });
    }
    let n = d.len() as f64;
    let t = m / (s / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::InvalidArgument(format!("t distribution: {e}")))?;
    Ok(match alternative {
        Alternative::Greater => 1.0 - dist.cdf(t),
        Alternative::Less => dist.cdf(t),
    })
}

/// How the Wilcoxon p-value is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WilcoxonMethod {
    /// Exact for n ≤ 25 after dropping zeros, normal approximation above.
    #[default]
    Auto,
    /// Exhaustive sign-assignment distribution (n ≤ 50).
    Exact,
    /// Normal approximation with continuity and tie corrections.
    NormalApprox,
}

/// One-sided Wilcoxon signed-rank test on the differences. Zeros are
/// dropped; ties get average ranks.
pub fn wilcoxon_signed_rank(sample: &PairedSample, alternative: Alternative) -> Result<f64> {
    wilcoxon_signed_rank_method(sample, alternative, WilcoxonMethod::Auto)
}

/// [`wilcoxon_signed_rank`] with the computation method forced.
pub fn wilcoxon_signed_rank_method(
    sample: &PairedSample,
    alternative: Alternative,
    method: WilcoxonMethod,
) -> Result<f64> {
    let nonzero: Vec<f64> = sample.diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "Wilcoxon signed-rank undefined when all differences are zero".into(),
        ));
    }

    // average ranks of |d|, kept on a doubled scale so ties stay integral
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| nonzero[i].abs().total_cmp(&nonzero[j].abs()));
    let mut doubled_ranks = vec![0u64; n];
    let mut tie_groups: Vec<u64> = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && nonzero[order[j]].abs() == nonzero[order[i]].abs() {
            j += 1;
        }
        // ranks i+1 ..= j averaged, doubled: (i+1 + j)
        let doubled = (i + 1 + j) as u64;
        for &idx in &order[i..j] {
            doubled_ranks[idx] = doubled;
        }
        tie_groups.push((j - i) as u64);
        i = j;
    }
    let w2: u64 = nonzero
        .iter()
        .zip(&doubled_ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, &r)| r)
        .sum();

    let exact = match method {
        WilcoxonMethod::Auto => n <= 25,
        WilcoxonMethod::Exact => {
            if n > 50 {
                return Err(Error::InsufficientData {
                    context: "exact Wilcoxon limited to 50 nonzero differences",
                    got: n,
                    need: 50,
                });
            }
            true
        }
        WilcoxonMethod::NormalApprox => false,
    };

    if exact {
        // subset-sum distribution of the doubled ranks under random signs
        let total: u64 = doubled_ranks.iter().sum();
        let mut counts = vec![0u64; total as usize + 1];
        counts[0] = 1;
        for &r in &doubled_ranks {
            for s in (r as usize..counts.len()).rev() {
                counts[s] += counts[s - r as usize];
            }
        }
        let denom = 2f64.powi(n as i32);
        let ge: u64 = counts[w2 as usize..].iter().sum();
        let le: u64 = counts[..=w2 as usize].iter().sum();
        Ok(match alternative {
            Alternative::Greater => ge as f64 / denom,
            Alternative::Less => le as f64 / denom,
        })
    } else {
        let nf = n as f64;
        let mean2 = nf * (nf + 1.0) / 2.0;
        let tie_term: f64 = tie_groups
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum();
        let var2 = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 6.0 - tie_term / 12.0;
        if var2 <= 0.0 {
            return Err(Error::InvalidArgument(
                "Wilcoxon variance degenerate under ties".into(),
            ));
        }
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let w2 = w2 as f64;
        Ok(match alternative {
            Alternative::Greater => 1.0 - normal.cdf((w2 - 1.0 - mean2) / var2.sqrt()),
            Alternative::Less => normal.cdf((w2 + 1.0 - mean2) / var2.sqrt()),
        })
    }
}

/// Statistic bootstrapped by [`bca_interval`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootStatistic {
    Mean,
    Median,
}

impl BootStatistic {
    fn eval(self, xs: &[f64]) -> f64 {
        match self {
            BootStatistic::Mean => mean(xs),
            BootStatistic::Median => {
                let mut v = xs.to_vec();
                v.sort_by(f64::total_cmp);
                let n = v.len();
                if n % 2 == 1 {
                    v[n / 2]
                } else {
                    0.5 * (v[n / 2 - 1] + v[n / 2])
                }
            }
        }
    }
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Bias-corrected and accelerated bootstrap confidence interval for the mean
/// or median of the paired differences. Resampling is of paired rows;
/// replicate b draws from its own RNG stream of `seed`, so the interval is
/// deterministic per seed and independent of evaluation order.
pub fn bca_interval(
    diffs: &[f64],
    statistic: BootStatistic,
    level: f64,
    n_boot: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if diffs.len() < 2 {
        return Err(Error::InsufficientData {
            context: "bootstrap sample",
            got: diffs.len(),
            need: 2,
        });
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must be in (0,1), got {level}"
        )));
    }
    if n_boot < 1000 {
        return Err(Error::InvalidArgument(format!(
            "need at least 1000 bootstrap replicates, got {n_boot}"
        )));
    }
    let n = diffs.len();
    let theta_hat = statistic.eval(diffs);
    if diffs.iter().all(|&d| d == diffs[0]) {
        return Ok((theta_hat, theta_hat));
    }

    let mut thetas: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64 + 1);
            let mut resample = Vec::with_capacity(n);
            for _ in 0..n {
                resample.push(diffs[rand::Rng::random_range(&mut rng, 0..n)]);
            }
            statistic.eval(&resample)
        })
        .collect();
    thetas.sort_by(f64::total_cmp);

    // bias correction from the bootstrap CDF at the point estimate
    let below = thetas.iter().filter(|&&t| t < theta_hat).count() as f64;
    let b = n_boot as f64;
    let prop = (below / b).clamp(1.0 / (b + 1.0), 1.0 - 1.0 / (b + 1.0));
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z0 = normal.inverse_cdf(prop);

    // acceleration from jackknife skewness
    let jack: Vec<f64> = (0..n)
        .map(|i| {
            let mut rest = Vec::with_capacity(n - 1);
            rest.extend_from_slice(&diffs[..i]);
            rest.extend_from_slice(&diffs[i + 1..]);
            statistic.eval(&rest)
        })
        .collect();
    let jack_mean = mean(&jack);
    let d2: f64 = jack.iter().map(|j| (jack_mean - j).powi(2)).sum();
    let d3: f64 = jack.iter().map(|j| (jack_mean - j).powi(3)).sum();
    let accel = if d2 > 0.0 { d3 / (6.0 * d2.powf(1.5)) } else { 0.0 };

    let alpha = (1.0 - level) / 2.0;
    let adjusted = |z_alpha: f64| -> f64 {
        let num = z0 + z_alpha;
        normal.cdf(z0 + num / (1.0 - accel * num))
    };
    let q_lo = adjusted(normal.inverse_cdf(alpha));
    let q_hi = adjusted(normal.inverse_cdf(1.0 - alpha));
    Ok((
        quantile_sorted(&thetas, q_lo),
        quantile_sorted(&thetas, q_hi),
    ))
}

/// One pairwise row of the significance table.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceRow {
    pub method_a: String,
    pub method_b: String,
    pub t_p: f64,
    pub bca_mean: (f64, f64),
    pub bca_median: (f64, f64),
    /// NaN when the test is undefined (all differences zero).
    pub wilcoxon_p: f64,
    /// Semicolon-joined list of tests significant at the table's level:
    /// subset of {t, bca_mean, bca_median, wilcoxon}.
    pub flags: String,
}

/// The full pairwise table plus notes about skipped pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignificanceTable {
    pub rows: Vec<SignificanceRow>,
    pub notes: Vec<String>,
}

/// Build the pairwise significance grid from per-method, per-year statistics
/// (typically annual Sharpe ratios). For each ordered pair (earlier method,
/// later method) the differences are first−second over the years both
/// methods have; one-sided tests use [`Alternative::Greater`]. Pairs with
/// fewer than 3 common years are skipped with a note. `level` is the
/// confidence level for the intervals; tests flag at significance 1−level.
pub fn significance_table(
    per_method: &[(String, BTreeMap<i64, f64>)],
    level: f64,
    n_boot: usize,
    seed: u64,
) -> Result<SignificanceTable> {
    if per_method.len() < 2 {
        return Err(Error::InsufficientData {
            context: "methods to compare",
            got: per_method.len(),
            need: 2,
        });
    }
    let alpha = 1.0 - level;
    let mut table = SignificanceTable::default();
    for i in 0..per_method.len() {
        for j in i + 1..per_method.len() {
            let (name_a, years_a) = &per_method[i];
            let (name_b, years_b) = &per_method[j];
            let diffs: Vec<f64> = years_a
                .iter()
                .filter_map(|(year, &va)| {
                    years_b
                        .get(year)
                        .map(|&vb| va - vb)
                        .filter(|d| d.is_finite() && va.is_finite())
                })
                .collect();
            if diffs.len() < 3 {
                table.notes.push(format!(
                    "skipped {name_a} vs {name_b}: only {} usable common years",
                    diffs.len()
                ));
                continue;
            }
            let sample = PairedSample::new((name_a.clone(), name_b.clone()), diffs.clone())?;
            let t_p = paired_t(&sample, Alternative::Greater)?;
            let pair_seed = crate::seeding::child_seed(seed, &format!("{name_a}|{name_b}"));
            let bca_mean = bca_interval(&diffs, BootStatistic::Mean, level, n_boot, pair_seed)?;
            let bca_median = bca_interval(
                &diffs,
                BootStatistic::Median,
                level,
                n_boot,
                pair_seed.wrapping_add(1),
            )?;
            let wilcoxon_p = match wilcoxon_signed_rank(&sample, Alternative::Greater) {
                Ok(p) => p,
                Err(_) => f64::NAN,
            };

            let mut flags = Vec::new();
            if t_p < alpha {
                flags.push("t");
            }
            if bca_mean.0 > 0.0 || bca_mean.1 < 0.0 {
                flags.push("bca_mean");
            }
            if bca_median.0 > 0.0 || bca_median.1 < 0.0 {
                flags.push("bca_median");
            }
            if wilcoxon_p.is_finite() && wilcoxon_p < alpha {
                flags.push("wilcoxon");
            }
            table.rows.push(SignificanceRow {
                method_a: name_a.clone(),
                method_b: name_b.clone(),
                t_p,
                bca_mean,
                bca_median,
                wilcoxon_p,
                flags: flags.join(";"),
            });
        }
    }
    Ok(table)
}

/// Write the significance table as CSV with columns
/// `method_a,method_b,t_p,bca_mean_lo,bca_mean_hi,bca_med_lo,bca_med_hi,wilcoxon_p,flags`.
pub fn write_significance_csv(path: &Path, table: &SignificanceTable) -> Result<()> {
    crate::fsio::atomic_csv(path, |writer| {
        writer.write_record([
            "method_a",
            "method_b",
            "t_p",
            "bca_mean_lo",
            "bca_mean_hi",
            "bca_med_lo",
            "bca_med_hi",
            "wilcoxon_p",
            "flags",
        ])?;
        for row in &table.rows {
            writer.write_record([
                row.method_a.clone(),
                row.method_b.clone(),
                format!("{:.12e}", row.t_p),
                format!("{:.12e}", row.bca_mean.0),
                format!("{:.12e}", row.bca_mean.1),
                format!("{:.12e}", row.bca_median.0),
                format!("{:.12e}", row.bca_median.1),
                format!("{:.12e}", row.wilcoxon_p),
                row.flags.clone(),
            ])?;
        }
        Ok(())
    })
}
