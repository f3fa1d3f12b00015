//! Monte Carlo checks of the posterior and predictive samplers.

mod common;

use common::*;
use conjnngp::conjugate_models::{fit_latent, fit_response, sample_latent, sample_response, BetaPrior};
use conjnngp::covariance::KernelSpec;
use conjnngp::geometry::{build_prediction_neighbors, build_training_neighbors, dist, LocationSet};
use conjnngp::nngp_factor::{build_factor, build_prediction_factor, FactorTarget};
use conjnngp::prediction::{predict_mean, predictive_t_exact, sample_predictive};
use conjnngp::sparse_solver::CgConfig;
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

const PHI: f64 = 7.0;

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn response_beta_draws_follow_student_t() {
    let n = 100;
    let locs = random_locs(n, 41);
    let (x, y) = regression_data(&locs, 42);
    let delta2 = 0.4;
    let f = build_factor(&locs, &build_training_neighbors(&locs, 10).unwrap(), &KernelSpec::exponential(PHI).unwrap(), FactorTarget::Response { delta2 }).unwrap();
    let post = fit_response(&x, &y, &f, &BetaPrior::flat(2.0, 1.0)).unwrap();
    let draws = sample_response(&post, 5000, 2024).unwrap();
    let dof = 2.0 * post.a_star();
    for j in 0..2 {
        let scale = (post.b_star() / post.a_star() * post.v_star()[(j, j)]).sqrt();
        let t = StudentsT::new(post.mu_star()[j], scale, dof).unwrap();
        let sample: Vec<f64> = (0..draws.len()).map(|l| draws.beta(l)[j]).collect();
        let d = ks_statistic(&sample, |v| t.cdf(v));
        let p = ks_pvalue(d, sample.len());
        assert!(p > 0.01, "beta_{j}: KS D={d} p={p}");
    }
}

#[test]
fn predictive_draws_center_on_the_kriging_mean() {
    let n = 80;
    let locs = random_locs(n, 51);
    let (x, y) = regression_data(&locs, 52);
    let delta2 = 0.3;
    let kernel = KernelSpec::exponential(PHI).unwrap();
    let f = build_factor(&locs, &build_training_neighbors(&locs, 10).unwrap(), &kernel, FactorTarget::Latent).unwrap();
    let cfg = CgConfig::with_tol(1e-10);
    let post = fit_latent(&x, &y, &f, delta2, &BetaPrior::flat(2.0, 1.0), &cfg).unwrap();
    let draws = sample_latent(&post, 5000, 77, &cfg).unwrap();
    let sites = LocationSet::new(vec![[0.2, 0.2], [0.55, 0.8], [0.95, 0.4]]).unwrap();
    let pf = build_prediction_factor(&locs, &sites, &build_prediction_neighbors(&locs, &sites, 10).unwrap(), &kernel, FactorTarget::Latent).unwrap();
    let xu = DMatrix::from_row_slice(3, 2, &[1.0, 0.1, 1.0, -0.6, 1.0, 0.9]);
    let (mean_w, mean_y) = predict_mean(&post, &xu, &pf).unwrap();
    let pd = sample_predictive(&draws, &xu, &pf, delta2, 5).unwrap();
    for i in 0..3 {
        for (got, want) in [(pd.w(i), mean_w[i]), (pd.y(i), mean_y[i])] {
            let (m, v) = mean_var(got);
            let se = (v / got.len() as f64).sqrt();
            assert!((m - want).abs() < 3.0 * se, "site {i}: {m} vs {want} (se {se})");
        }
    }
}

#[test]
fn predictive_variance_matches_dense_oracle() {
    let n = 60;
    let locs = random_locs(n, 61);
    let (x, y) = regression_data(&locs, 62);
    let delta2 = 0.2;
    let kernel = KernelSpec::exponential(PHI).unwrap();
    let f = build_factor(&locs, &build_training_neighbors(&locs, n - 1).unwrap(), &kernel, FactorTarget::Latent).unwrap();
    let cfg = CgConfig::with_tol(1e-12);
    let prior = BetaPrior::flat(2.0, 1.0);
    let post = fit_latent(&x, &y, &f, delta2, &prior, &cfg).unwrap();
    let draws = sample_latent(&post, 20_000, 3, &cfg).unwrap();
    let sites = LocationSet::new(vec![[0.37, 0.61], [0.8, 0.15]]).unwrap();
    let pf = build_prediction_factor(&locs, &sites, &build_prediction_neighbors(&locs, &sites, n).unwrap(), &kernel, FactorTarget::Latent).unwrap();
    let xu = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 1.0, -0.5]);
    let pd = sample_predictive(&draws, &xu, &pf, delta2, 9).unwrap();
    let exact = predictive_t_exact(&post, &xu, &pf, delta2, 0.95, &cfg).unwrap();

    // dense oracle: kriging weights M⁻¹c, residual variance 1 − cᵀM⁻¹c
    let m = dense_corr(&locs, PHI);
    let m_inv = m.clone().try_inverse().unwrap();
    let oracle = dense_latent_fit(&x, &y, &m, delta2, &prior);
    let v = oracle.gram.clone().try_inverse().unwrap();
    for i in 0..2 {
        let c = DVector::from_fn(n, |j, _| (-PHI * dist(sites.coord(i), locs.coord(j))).exp());
        let a = &m_inv * &c;
        let du = 1.0 - c.dot(&a);
        let mut g = DVector::zeros(n + 2);
        g[0] = xu[(i, 0)];
        g[1] = xu[(i, 1)];
        g.rows_mut(2, n).copy_from(&a);
        let want = oracle.b_star / (oracle.a_star - 1.0) * ((g.transpose() * &v * &g)[0] + delta2 + du);
        let (_, got) = mean_var(pd.y(i));
        assert!((got - want).abs() < 0.10 * want, "site {i}: {got} vs {want}");
        assert!((exact.var_y[i] - want).abs() < 1e-6 * want, "exact {} vs {want}", exact.var_y[i]);
    }
}
