//! Posterior predictive inference at new sites for the conjugate latent
//! model: point predictions, the exact marginal t form for small site sets
//! and the two-stage sampler.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::conjugate_models::{NIGPosterior, PosteriorDraws};
use crate::error::{invalid, Error, Result};
use crate::nngp_factor::{FactorTarget, PredictionFactor};
use crate::rng::{domain, substream};
use crate::sparse_solver::CgConfig;

/// Largest site count accepted by [`predictive_t_exact`].
pub const EXACT_T_MAX_SITES: usize = 500;

/// Sites per streaming block in the CLI.
pub const SITE_BLOCK: usize = 10_000;

fn check_inputs(n_train: usize, p: usize, phi: f64, xu: &DMatrix<f64>, pf: &PredictionFactor) -> Result<()> {
    if pf.target() != FactorTarget::Latent {
        return invalid("latent prediction needs a latent-target prediction factor");
    }
    if pf.phi() != phi {
        return invalid(format!("prediction factor phi {} differs from fitted phi {phi}", pf.phi()));
    }
    if pf.n_train() != n_train {
        return Err(Error::DimensionMismatch(format!("factor indexes {} training sites, posterior has {n_train}", pf.n_train())));
    }
    if xu.nrows() != pf.len() || xu.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "site design is {}×{}, expected {}×{p}",
            xu.nrows(),
            xu.ncols(),
            pf.len()
        )));
    }
    Ok(())
}

/// `μ_wu = A_u ŵ` and `μ_yu = X_u β̂ + μ_wu`.
pub fn predict_mean(post: &NIGPosterior, xu: &DMatrix<f64>, pf: &PredictionFactor) -> Result<(Vec<f64>, Vec<f64>)> {
    predict_mean_from(post.beta_hat(), post.w_hat(), post.phi(), xu, pf)
}

/// [`predict_mean`] from stored point estimates `β̂`, `ŵ` fitted at `phi`.
pub fn predict_mean_from(
    beta_hat: &[f64],
    w_hat: &[f64],
    phi: f64,
    xu: &DMatrix<f64>,
    pf: &PredictionFactor,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_inputs(w_hat.len(), beta_hat.len(), phi, xu, pf)?;
    let mean_w = pf.a_u().matvec(w_hat);
    let mut mean_y = mean_w.clone();
    for (i, v) in mean_y.iter_mut().enumerate() {
        *v += xu.row(i).iter().zip(beta_hat).map(|(x, b)| x * b).sum::<f64>();
    }
    Ok((mean_w, mean_y))
}

/// Draws of `w(U)` and `y(U)`, stored site-major (`site * L + draw`).
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDraws {
    sites: usize,
    draws: usize,
    seed: u64,
    w: Vec<f64>,
    y: Vec<f64>,
}

impl PredictiveDraws {
    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn w(&self, site: usize) -> &[f64] {
        &self.w[site * self.draws..(site + 1) * self.draws]
    }

    pub fn y(&self, site: usize) -> &[f64] {
        &self.y[site * self.draws..(site + 1) * self.draws]
    }
}

/// Two-stage sampler: `w(U)ˡ ~ N(A_u wˡ, σ²ˡ D_u)`, then
/// `y(U)ˡ ~ N(X_u βˡ + w(U)ˡ, δ² σ²ˡ)`, independently per site.
pub fn sample_predictive(
    draws: &PosteriorDraws,
    xu: &DMatrix<f64>,
    pf: &PredictionFactor,
    delta2: f64,
    seed: u64,
) -> Result<PredictiveDraws> {
    sample_predictive_from(draws, xu, pf, delta2, seed, 0)
}

/// As [`sample_predictive`] for a block of sites whose first site has global
/// index `first_site`. Each site draws from its own substream keyed by the
/// global index, so splitting a site set into blocks does not change output.
pub fn sample_predictive_from(
    draws: &PosteriorDraws,
    xu: &DMatrix<f64>,
    pf: &PredictionFactor,
    delta2: f64,
    seed: u64,
    first_site: u64,
) -> Result<PredictiveDraws> {
    if draws.is_empty() {
        return invalid("no posterior draws");
    }
    if delta2 != draws.delta2() {
        return invalid(format!("delta2 {delta2} differs from the draws' delta2 {}", draws.delta2()));
    }
    if pf.target() != FactorTarget::Latent {
        return invalid("latent prediction needs a latent-target prediction factor");
    }
    if pf.n_train() != draws.n() || xu.nrows() != pf.len() || xu.ncols() != draws.p() {
        return Err(Error::DimensionMismatch("site design, prediction factor and draws disagree".into()));
    }
    let big_l = draws.len();
    let a_u = pf.a_u();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..pf.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, domain::PREDICTIVE, first_site + i as u64);
            let (cols, vals) = a_u.row(i);
            let du = pf.d_u()[i];
            let xrow: Vec<f64> = xu.row(i).iter().copied().collect();
            let mut ws = Vec::with_capacity(big_l);
            let mut ys = Vec::with_capacity(big_l);
            for l in 0..big_l {
                let s2 = draws.sigma2()[l];
                let wl = draws.w(l);
                let mean: f64 = cols.iter().zip(vals).map(|(&j, v)| v * wl[j]).sum();
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                let w = if du > 0.0 { mean + (s2 * du).sqrt() * z1 } else { mean };
                let trend: f64 = xrow.iter().zip(draws.beta(l)).map(|(x, b)| x * b).sum();
                ws.push(w);
                ys.push(trend + w + (delta2 * s2).sqrt() * z2);
            }
            (ws, ys)
        })
        .collect();
    let mut out = PredictiveDraws {
        sites: pf.len(),
        draws: big_l,
        seed,
        w: Vec::with_capacity(pf.len() * big_l),
        y: Vec::with_capacity(pf.len() * big_l),
    };
    for (w, y) in rows {
        out.w.extend(w);
        out.y.extend(y);
    }
    Ok(out)
}

/// Exact marginal predictive summary.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSummary {
    pub mean_w: Vec<f64>,
    pub mean_y: Vec<f64>,
    /// Squared scale of the marginal t: `(b*/a*)(gᵀ(X*ᵀX*)⁻¹g + δ² + d_u)`.
    pub var_y_marginal: Vec<f64>,
    /// Variance of that t, `var_y_marginal · dof / (dof − 2)`.
    pub var_y: Vec<f64>,
    pub dof: f64,
    pub interval_level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Marginal multivariate-t predictive for a small site set, with `2a*`
/// degrees of freedom. Each site costs one CG solve against `X*ᵀX*` for
/// `g = [X_u,i; A_u,i]`.
pub fn predictive_t_exact(
    post: &NIGPosterior,
    xu: &DMatrix<f64>,
    pf: &PredictionFactor,
    delta2: f64,
    level: f64,
    cfg: &CgConfig,
) -> Result<PredictiveSummary> {
    if pf.len() > EXACT_T_MAX_SITES {
        return invalid(format!(
            "{} sites exceed the exact-t limit of {EXACT_T_MAX_SITES}; use the two-stage sampler",
            pf.len()
        ));
    }
    if delta2 != post.delta2() {
        return invalid(format!("delta2 {delta2} differs from fitted delta2 {}", post.delta2()));
    }
    if !(level > 0.0 && level < 1.0) {
        return invalid(format!("interval level must lie in (0, 1), got {level}"));
    }
    let (mean_w, mean_y) = predict_mean(post, xu, pf)?;
    let (n, p) = (post.n(), post.p());
    let quad: Vec<f64> = (0..pf.len())
        .into_par_iter()
        .map(|i| {
            let mut g = vec![0.0; p + n];
            for k in 0..p {
                g[k] = xu[(i, k)];
            }
            let (cols, vals) = pf.a_u().row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                g[p + j] = v;
            }
            let (h, _) = post.solve(&g, cfg)?;
            Ok(g.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>())
        })
        .collect::<Result<_>>()?;
    let dof = 2.0 * post.a_star();
    let scale = post.b_star() / post.a_star();
    let var_y_marginal: Vec<f64> = quad.iter().zip(pf.d_u()).map(|(q, du)| scale * (q.max(0.0) + delta2 + du)).collect();
    let var_y = var_y_marginal
        .iter()
        .map(|v| if dof > 2.0 { v * dof / (dof - 2.0) } else { f64::INFINITY })
        .collect();
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let q = t.inverse_cdf(0.5 + level / 2.0);
    let lower = mean_y.iter().zip(&var_y_marginal).map(|(m, v)| m - q * v.sqrt()).collect();
    let upper = mean_y.iter().zip(&var_y_marginal).map(|(m, v)| m + q * v.sqrt()).collect();
    Ok(PredictiveSummary { mean_w, mean_y, var_y_marginal, var_y, dof, interval_level: level, lower, upper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate_models::{fit_latent, sample_latent, BetaPrior};
    use crate::covariance::KernelSpec;
    use crate::geometry::{build_prediction_neighbors, build_training_neighbors, order_locations, LocationSet, OrderingStrategy};
    use crate::nngp_factor::{build_factor, build_prediction_factor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        train: LocationSet,
        post: NIGPosterior,
        kernel: KernelSpec,
    }

    fn setup(n: usize, m: usize) -> Setup {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        let train = order_locations(&LocationSet::new(raw).unwrap(), OrderingStrategy::Coordinate);
        let kernel = KernelSpec::exponential(5.0).unwrap();
        let g = build_training_neighbors(&train, m).unwrap();
        let f = build_factor(&train, &g, &kernel, FactorTarget::Latent).unwrap();
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() });
        let y: Vec<f64> = (0..n).map(|i| 0.5 + x[(i, 1)] + rng.random::<f64>()).collect();
        let post = fit_latent(&x, &y, &f, 0.2, &BetaPrior::flat(2.0, 1.0), &CgConfig::with_tol(1e-12)).unwrap();
        Setup { train, post, kernel }
    }

    fn factor_for(s: &Setup, sites: Vec<[f64; 2]>, m: usize) -> PredictionFactor {
        let pred = LocationSet::new(sites).unwrap();
        let g = build_prediction_neighbors(&s.train, &pred, m).unwrap();
        build_prediction_factor(&s.train, &pred, &g, &s.kernel, FactorTarget::Latent).unwrap()
    }

    #[test]
    fn coincident_site_interpolates() {
        let s = setup(30, 5);
        let j = 7;
        let pf = factor_for(&s, vec![s.train.coord(j)], 1);
        let xu = DMatrix::from_row_slice(1, 2, &[1.0, 0.3]);
        let (mw, my) = predict_mean(&s.post, &xu, &pf).unwrap();
        assert!((mw[0] - s.post.w_hat()[j]).abs() < 1e-12);
        let trend = s.post.beta_hat()[0] + 0.3 * s.post.beta_hat()[1];
        assert!((my[0] - trend - mw[0]).abs() < 1e-12);
    }

    #[test]
    fn far_site_falls_back_to_regression() {
        let s = setup(30, 5);
        let pf = factor_for(&s, vec![[1e4, 1e4]], 3);
        let xu = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let (mw, my) = predict_mean(&s.post, &xu, &pf).unwrap();
        assert_eq!(mw[0], 0.0);
        assert!((my[0] - (s.post.beta_hat()[0] + 2.0 * s.post.beta_hat()[1])).abs() < 1e-12);
    }

    #[test]
    fn phi_mismatch_rejected() {
        let s = setup(20, 4);
        let pred = LocationSet::new(vec![[0.5, 0.5]]).unwrap();
        let g = build_prediction_neighbors(&s.train, &pred, 3).unwrap();
        let other = KernelSpec::exponential(6.0).unwrap();
        let pf = build_prediction_factor(&s.train, &pred, &g, &other, FactorTarget::Latent).unwrap();
        assert!(predict_mean(&s.post, &DMatrix::from_element(1, 2, 1.0), &pf).is_err());
    }

    #[test]
    fn coincident_site_has_no_stage_one_noise() {
        let s = setup(25, 4);
        let j = 3;
        let pf = factor_for(&s, vec![s.train.coord(j)], 1);
        assert_eq!(pf.d_u()[0], 0.0);
        let draws = sample_latent(&s.post, 20, 5, &CgConfig::default()).unwrap();
        let pd = sample_predictive(&draws, &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), &pf, 0.2, 9).unwrap();
        for l in 0..20 {
            assert_eq!(pd.w(0)[l], draws.w(l)[j]);
        }
    }

    #[test]
    fn blocks_do_not_change_draws() {
        let s = setup(25, 4);
        let sites = vec![[0.1, 0.2], [0.5, 0.5], [0.9, 0.3], [0.4, 0.8]];
        let pf = factor_for(&s, sites.clone(), 3);
        let xu = DMatrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let draws = sample_latent(&s.post, 10, 5, &CgConfig::default()).unwrap();
        let all = sample_predictive(&draws, &xu, &pf, 0.2, 4).unwrap();
        let tail = factor_for(&s, sites[2..].to_vec(), 3);
        let part = sample_predictive_from(&draws, &xu.rows(2, 2).into_owned(), &tail, 0.2, 4, 2).unwrap();
        assert_eq!(part.y(0), all.y(2));
        assert_eq!(part.w(1), all.w(3));
    }

    #[test]
    fn exact_variance_matches_dense_oracle() {
        let n = 40;
        let s = setup(n, n - 1);
        let j = 11;
        let pf = factor_for(&s, vec![s.train.coord(j), [0.33, 0.61]], n);
        let xu = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 1.0, 0.7]);
        let sum = predictive_t_exact(&s.post, &xu, &pf, 0.2, 0.95, &CgConfig::with_tol(1e-12)).unwrap();
        let vinv = s.post.sys().to_dense().try_inverse().unwrap();
        let scale = s.post.b_star() / s.post.a_star();
        for i in 0..2 {
            let mut g = nalgebra::DVector::zeros(n + 2);
            g[0] = xu[(i, 0)];
            g[1] = xu[(i, 1)];
            let (cols, vals) = pf.a_u().row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                g[2 + c] = v;
            }
            let q = (g.transpose() * &vinv * &g)[0];
            let expect = scale * (q + 0.2 + pf.d_u()[i]);
            assert!((sum.var_y_marginal[i] - expect).abs() <= 1e-8 * expect);
            assert!(sum.var_y_marginal[i] >= scale * (0.2 + pf.d_u()[i]));
            assert!(sum.lower[i] < sum.mean_y[i] && sum.mean_y[i] < sum.upper[i]);
        }
        assert_eq!(sum.dof, 2.0 * 2.0 + n as f64);
    }

    #[test]
    fn exact_path_guards_site_count() {
        let s = setup(20, 3);
        let sites: Vec<[f64; 2]> = (0..EXACT_T_MAX_SITES + 1).map(|i| [i as f64 / 600.0, 0.5]).collect();
        let pf = factor_for(&s, sites, 3);
        let xu = DMatrix::from_element(EXACT_T_MAX_SITES + 1, 2, 1.0);
        assert!(predictive_t_exact(&s.post, &xu, &pf, 0.2, 0.95, &CgConfig::default()).is_err());
    }
}
