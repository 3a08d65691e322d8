//! Identity-based oracles for the allocation chain: the predictive-return
//! moments must match their direct structural forms (covariance D + X·M·X',
//! mean X·E[f]), and the optimal weights must agree between the efficient
//! form and the generic (1/γ)·Σ⁻¹μ form.

use blfuse_core::blapt::{
    bl_pipeline, optimal_weights_bl, posterior_theta, predictive_factors, predictive_returns,
    FactorModel, FuseMethod, Prior, SourceViews, ViewSet,
};
use blfuse_core::error::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Deterministically expand a flat seed vector into a BL-APT instance.
struct Instance {
    model: FactorModel,
    factors_mean: DVector<f64>,
    factors_cov: DMatrix<f64>,
}

fn build_instance(n: usize, k: usize, raw: &[f64]) -> Instance {
    let mut it = raw.iter().cycle();
    let mut next = || *it.next().unwrap();
    let exposures = DMatrix::from_fn(n, k, |_, _| next());
    let idio = DVector::from_fn(n, |_, _| 0.05 + next().abs());
    let half = DMatrix::from_fn(k, k, |_, _| next());
    let factor_cov = &half * half.transpose() + DMatrix::identity(k, k) * 0.1;
    let mean = DVector::from_fn(k, |_, _| 0.1 * next());
    let half2 = DMatrix::from_fn(k, k, |_, _| next());
    let m = &half2 * half2.transpose() + DMatrix::identity(k, k) * 0.05;
    Instance {
        model: FactorModel::new(exposures, idio, factor_cov).unwrap(),
        factors_mean: mean,
        factors_cov: m,
    }
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

fn rel_err_v(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn predictive_return_moments_match_structural_forms(
        n in 1usize..12,
        k in 1usize..4,
        raw in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        let inst = build_instance(n, k, &raw);
        let fused = blfuse_core::gaussian::GaussianEstimate::new(
            inst.factors_mean.clone(),
            inst.factors_cov.clone(),
        ).unwrap();
        let pred = predictive_returns(&inst.model, &fused).unwrap();

        // covariance oracle: D + X·M·X'
        let d = DMatrix::from_diagonal(&inst.model.idio);
        let x = &inst.model.exposures;
        let direct_cov = &d + x * &inst.factors_cov * x.transpose();
        prop_assert!(rel_err(pred.cov(), &direct_cov) < 1e-8);

        // mean oracle: X·E[f]
        let direct_mean = x * &inst.factors_mean;
        prop_assert!(rel_err_v(pred.mean(), &direct_mean) < 1e-8);
    }

    #[test]
    fn weights_agree_between_efficient_and_generic_forms(
        n in 1usize..12,
        k in 1usize..4,
        raw in prop::collection::vec(-1.0f64..1.0, 64),
        gamma in 0.5f64..50.0,
    ) {
        let inst = build_instance(n, k, &raw);
        let fused = blfuse_core::gaussian::GaussianEstimate::new(
            inst.factors_mean.clone(),
            inst.factors_cov.clone(),
        ).unwrap();
        let efficient = optimal_weights_bl(&inst.model, &fused, gamma).unwrap();
        let pred = predictive_returns(&inst.model, &fused).unwrap();
        let generic = pred.cov().clone().cholesky().unwrap().solve(pred.mean()) / gamma;
        prop_assert!(rel_err_v(&efficient, &generic) < 1e-8);
    }

    #[test]
    fn posterior_interpolates_prior_and_views(
        k in 1usize..5,
        raw in prop::collection::vec(-1.0f64..1.0, 32),
    ) {
        let mut it = raw.iter().cycle();
        let mut next = || *it.next().unwrap();
        let xi = DVector::from_fn(k, |_, _| next());
        let v = DMatrix::from_diagonal(&DVector::from_fn(k, |_, _| 0.2 + next().abs()));
        let q = DVector::from_fn(k, |_, _| next());
        let omega = DVector::from_fn(k, |_, _| 0.2 + next().abs());
        let prior = Prior::new(xi.clone(), v.clone()).unwrap();
        let views = ViewSet::new(q.clone(), omega.clone()).unwrap();
        let post = posterior_theta(&prior, &views).unwrap();

        // coordinate-wise conjugate-update oracle (diagonal V and Ω)
        for j in 0..k {
            let var = 1.0 / (1.0 / v[(j, j)] + 1.0 / omega[j]);
            let mean = var * (xi[j] / v[(j, j)] + q[j] / omega[j]);
            prop_assert!((post.cov()[(j, j)] - var).abs() <= 1e-10 * var.max(1.0));
            prop_assert!((post.mean()[j] - mean).abs() <= 1e-10 * mean.abs().max(1.0));
            // posterior mean lies between prior mean and view
            let lo = xi[j].min(q[j]) - 1e-12;
            let hi = xi[j].max(q[j]) + 1e-12;
            prop_assert!(post.mean()[j] >= lo && post.mean()[j] <= hi);
        }
    }
}

#[test]
fn extreme_idio_spread_hits_the_condition_limit() {
    // one asset with ~1e16 times the precision of another drives the inner
    // matrix X'D⁻¹X + M⁻¹ past the conditioning limit
    let exposures = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let idio = DVector::from_vec(vec![1e-14, 1e4]);
    let factor_cov = DMatrix::identity(2, 2);
    let model = FactorModel::new(exposures, idio, factor_cov.clone()).unwrap();
    let fused = blfuse_core::gaussian::GaussianEstimate::new(
        DVector::from_vec(vec![0.1, 0.1]),
        factor_cov,
    )
    .unwrap();
    let err = predictive_returns(&model, &fused).unwrap_err();
    assert!(matches!(err, Error::IllConditioned { .. }), "got {err:?}");
}

#[test]
fn pipeline_with_single_method_equals_hand_chained_calls() {
    let raw: Vec<f64> = (0..64).map(|i| ((i * 37 % 19) as f64 - 9.0) / 10.0).collect();
    let inst = build_instance(6, 2, &raw);
    let prior = Prior::new(
        DVector::from_vec(vec![0.02, -0.01]),
        DMatrix::from_diagonal(&DVector::from_vec(vec![0.004, 0.003])),
    )
    .unwrap();
    let views = SourceViews::new(
        ViewSet::new(
            DVector::from_vec(vec![0.05, 0.0]),
            DVector::from_vec(vec![0.01, 0.02]),
        )
        .unwrap(),
        DMatrix::from_diagonal(&DVector::from_vec(vec![0.02, 0.01])),
    )
    .unwrap();

    let (fused, weights) = bl_pipeline(
        &prior,
        std::slice::from_ref(&views),
        &inst.model,
        FuseMethod::Single(0),
        10.0,
    )
    .unwrap();

    let post = posterior_theta(&prior, &views.views).unwrap();
    let pred_f = predictive_factors(&post, &views.factor_cov).unwrap();
    assert_eq!(fused, pred_f);
    let by_hand = optimal_weights_bl(&inst.model, &pred_f, 10.0).unwrap();
    assert!((weights - by_hand).norm() < 1e-14);
}
