//! Fitted quantities against dense full-process oracles.

mod common;

use common::*;
use conjnngp::conjugate_models::{fit_latent, fit_response, BetaPrior};
use conjnngp::covariance::KernelSpec;
use conjnngp::geometry::{build_prediction_neighbors, build_training_neighbors, LocationSet};
use conjnngp::nngp_factor::{build_factor, build_prediction_factor, FactorTarget};
use conjnngp::prediction::predictive_t_exact;
use conjnngp::sparse_solver::CgConfig;
use nalgebra::{DMatrix, DVector};

const PHI: f64 = 9.0;

#[test]
fn full_conditioning_reproduces_dense_precision() {
    for &n in &[30, 90] {
        let locs = random_locs(n, n as u64);
        let g = build_training_neighbors(&locs, n - 1).unwrap();
        let f = build_factor(&locs, &g, &KernelSpec::exponential(PHI).unwrap(), FactorTarget::Latent).unwrap();
        let m_inv = dense_corr(&locs, PHI).try_inverse().unwrap();
        let q = f.precision_dense();
        assert!((q - &m_inv).norm() / m_inv.norm() < 1e-8);
    }
}

#[test]
fn latent_fit_matches_stacked_least_squares() {
    let n = 120;
    let locs = random_locs(n, 5);
    let (x, y) = regression_data(&locs, 6);
    let f = build_factor(&locs, &build_training_neighbors(&locs, n - 1).unwrap(), &KernelSpec::exponential(PHI).unwrap(), FactorTarget::Latent).unwrap();
    let m = dense_corr(&locs, PHI);
    let priors = [
        BetaPrior::flat(2.0, 1.5),
        BetaPrior::normal(DVector::from_vec(vec![0.5, -1.0]), DMatrix::from_row_slice(2, 2, &[4.0, 0.5, 0.5, 2.0]), 2.5, 0.7).unwrap(),
    ];
    for prior in &priors {
        for delta2 in [0.05, 0.8] {
            let post = fit_latent(&x, &y, &f, delta2, prior, &CgConfig::with_tol(1e-12)).unwrap();
            let oracle = dense_latent_fit(&x, &y, &m, delta2, prior);
            assert!(rel_err(post.gamma_hat(), oracle.gamma.as_slice()) < 1e-6);
            assert_eq!(post.a_star(), oracle.a_star);
            assert!((post.b_star() - oracle.b_star).abs() < 1e-8 * oracle.b_star);
            let sys = post.sys().to_dense();
            assert!((sys - &oracle.gram).norm() < 1e-8 * oracle.gram.norm());
        }
    }
}

#[test]
fn response_fit_matches_dense_conjugate_update() {
    let n = 150;
    let locs = random_locs(n, 9);
    let (x, y) = regression_data(&locs, 10);
    let delta2 = 0.3;
    let f = build_factor(&locs, &build_training_neighbors(&locs, n - 1).unwrap(), &KernelSpec::exponential(PHI).unwrap(), FactorTarget::Response { delta2 }).unwrap();
    let m = dense_corr(&locs, PHI);
    for prior in [
        BetaPrior::flat(2.0, 1.0),
        BetaPrior::normal(DVector::from_vec(vec![0.0, 0.0]), DMatrix::identity(2, 2) * 3.0, 2.0, 1.0).unwrap(),
    ] {
        let post = fit_response(&x, &y, &f, &prior).unwrap();
        let (mu, v, a, b) = dense_response_fit(&x, &y, &m, delta2, &prior);
        assert!(rel_err(post.mu_star().as_slice(), mu.as_slice()) < 1e-8);
        assert!((post.v_star() - &v).norm() < 1e-8 * v.norm());
        assert_eq!(post.a_star(), a);
        assert!((post.b_star() - b).abs() < 1e-8 * b);
    }
}

#[test]
fn response_kriging_matches_dense_conditional_mean() {
    let n = 60;
    let locs = random_locs(n, 21);
    let (x, y) = regression_data(&locs, 22);
    let delta2 = 0.2;
    let kernel = KernelSpec::exponential(PHI).unwrap();
    let target = FactorTarget::Response { delta2 };
    let f = build_factor(&locs, &build_training_neighbors(&locs, n - 1).unwrap(), &kernel, target).unwrap();
    let post = fit_response(&x, &y, &f, &BetaPrior::flat(2.0, 1.0)).unwrap();
    let sites = LocationSet::new(vec![[0.31, 0.72], [0.9, 0.05]]).unwrap();
    let pf = build_prediction_factor(&locs, &sites, &build_prediction_neighbors(&locs, &sites, n).unwrap(), &kernel, target).unwrap();
    let xu = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 1.0, -0.2]);
    let pred = post.predict_mean(&xu, &pf).unwrap();
    let k = dense_corr(&locs, PHI) + DMatrix::identity(n, n) * delta2;
    let resid = DVector::from_column_slice(post.residual());
    let alpha = k.try_inverse().unwrap() * resid;
    for i in 0..2 {
        let c = DVector::from_fn(n, |j, _| (-PHI * conjnngp::geometry::dist(sites.coord(i), locs.coord(j))).exp());
        let expect = (xu.row(i) * post.mu_star())[0] + c.dot(&alpha);
        assert!((pred[i] - expect).abs() < 1e-9, "{} vs {expect}", pred[i]);
    }
}

#[test]
fn exact_predictive_variance_at_coincident_site() {
    let n = 70;
    let locs = random_locs(n, 31);
    let (x, y) = regression_data(&locs, 32);
    let delta2 = 0.25;
    let kernel = KernelSpec::exponential(PHI).unwrap();
    let f = build_factor(&locs, &build_training_neighbors(&locs, n - 1).unwrap(), &kernel, FactorTarget::Latent).unwrap();
    let prior = BetaPrior::flat(2.0, 1.0);
    let post = fit_latent(&x, &y, &f, delta2, &prior, &CgConfig::with_tol(1e-12)).unwrap();
    let j = 17;
    let sites = LocationSet::new(vec![locs.coord(j)]).unwrap();
    let pf = build_prediction_factor(&locs, &sites, &build_prediction_neighbors(&locs, &sites, n).unwrap(), &kernel, FactorTarget::Latent).unwrap();
    let xu = DMatrix::from_row_slice(1, 2, &[1.0, x[(j, 1)]]);
    let s = predictive_t_exact(&post, &xu, &pf, delta2, 0.95, &CgConfig::with_tol(1e-12)).unwrap();
    // dense oracle: g = [x_u; e_j] and V = (X*ᵀX*)⁻¹ from the stacked system
    let oracle = dense_latent_fit(&x, &y, &dense_corr(&locs, PHI), delta2, &prior);
    let v = oracle.gram.try_inverse().unwrap();
    let mut g = DVector::zeros(n + 2);
    g[0] = 1.0;
    g[1] = x[(j, 1)];
    g[2 + j] = 1.0;
    let expect = oracle.b_star / oracle.a_star * ((g.transpose() * &v * &g)[0] + delta2 + 0.0);
    assert!(pf.d_u()[0].abs() < 1e-12);
    assert!((s.var_y_marginal[0] - expect).abs() < 1e-8 * expect);
    assert_eq!(s.dof, 2.0 * 2.0 + n as f64);
}
