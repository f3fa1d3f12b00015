use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use super::metrics::percentile;
use crate::conjugate_models::PosteriorDraws;
use crate::covariance::KernelSpec;
use crate::error::{invalid, Error, Result};
use crate::geometry::LocationSet;

/// Dense Gaussian `N(mean, cov)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSpec {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianSpec {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!("mean has {n} entries, covariance is {:?}", cov.shape())));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale {
                    return invalid("covariance is not symmetric");
                }
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn chol(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    m.clone().cholesky().ok_or(Error::NotPositiveDefinite { index: 0 })
}

fn log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// `KL(Q ‖ P) = ½[tr(Σ_P⁻¹Σ_Q) − log det(Σ_P⁻¹Σ_Q) + (μ_P−μ_Q)ᵀΣ_P⁻¹(μ_P−μ_Q) − n]`.
pub fn kl_divergence(p: &GaussianSpec, q: &GaussianSpec) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch(format!("dimensions {} and {} differ", p.dim(), q.dim())));
    }
    let cp = chol(&p.cov)?;
    let cq = chol(&q.cov)?;
    Ok(kl_with_factor(&cp, &p.mean, &q.cov, log_det(&cq), &q.mean))
}

fn kl_with_factor(cp: &Cholesky<f64, Dyn>, mp: &DVector<f64>, sq: &DMatrix<f64>, logdet_q: f64, mq: &DVector<f64>) -> f64 {
    let n = mp.len() as f64;
    let tr = cp.solve(sq).trace();
    let diff = mp - mq;
    let quad = diff.dot(&cp.solve(&diff));
    (0.5 * (tr - (logdet_q - log_det(cp)) + quad - n)).max(0.0)
}

/// Fitted collapsed model: `y ~ N(Xβ, σ² M̃ + τ² I)` with a fixed dense `M̃`.
#[derive(Clone, Debug)]
pub struct CollapsedModel {
    pub x: DMatrix<f64>,
    pub m_tilde: DMatrix<f64>,
}

/// Parameter draw entering the collapsed model.
#[derive(Clone, Debug, PartialEq)]
pub struct KlDraw {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub tau2: f64,
}

impl KlDraw {
    pub fn from_draws(draws: &PosteriorDraws) -> Vec<KlDraw> {
        (0..draws.len())
            .map(|l| KlDraw { beta: draws.beta(l).to_vec(), sigma2: draws.sigma2()[l], tau2: draws.tau2()[l] })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KlSummary {
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub values: Vec<f64>,
    /// Set when fewer than two draws make the percentiles meaningless.
    pub degenerate: bool,
}

fn summarize(values: Vec<f64>) -> Result<KlSummary> {
    if values.is_empty() {
        return invalid("no draws");
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(KlSummary {
        mean,
        lo95: percentile(&sorted, 0.025),
        hi95: percentile(&sorted, 0.975),
        degenerate: values.len() < 2,
        values,
    })
}

/// Truth in the collapsed space: `N(Xβ, σ² M + τ² I)` with the full
/// exponential correlation `M` on `locs`.
pub fn collapsed_truth(locs: &LocationSet, x: &DMatrix<f64>, beta: &[f64], sigma2: f64, tau2: f64, phi: f64) -> Result<GaussianSpec> {
    let n = locs.len();
    if x.shape() != (n, beta.len()) {
        return Err(Error::DimensionMismatch("design and coefficients disagree".into()));
    }
    let kernel = KernelSpec::exponential(phi)?;
    let cov = DMatrix::from_fn(n, n, |i, j| {
        sigma2 * kernel.corr_between(locs.coord(i), locs.coord(j)) + if i == j { tau2 } else { 0.0 }
    });
    GaussianSpec::new(x * DVector::from_column_slice(beta), cov)
}

fn check_model(model: &CollapsedModel, truth: &GaussianSpec, draws: &[KlDraw]) -> Result<()> {
    let n = truth.dim();
    if model.x.nrows() != n || model.m_tilde.shape() != (n, n) {
        return Err(Error::DimensionMismatch("collapsed model and truth disagree".into()));
    }
    if draws.iter().any(|d| d.beta.len() != model.x.ncols() || !(d.sigma2 > 0.0) || !(d.tau2 >= 0.0)) {
        return invalid("draw with wrong coefficient count or non-positive variance");
    }
    Ok(())
}

/// Posterior-averaged `KL(Q ‖ P_θ)`, one dense factorization of
/// `Σ_P = σ² M̃ + τ² I` per draw.
pub fn empirical_kl(draws: &[KlDraw], model: &CollapsedModel, truth: &GaussianSpec) -> Result<KlSummary> {
    check_model(model, truth, draws)?;
    let logdet_q = log_det(&chol(&truth.cov)?);
    let values = draws
        .par_iter()
        .map(|d| {
            let mut cov = &model.m_tilde * d.sigma2;
            for i in 0..cov.nrows() {
                cov[(i, i)] += d.tau2;
            }
            let cp = chol(&cov)?;
            let mp = &model.x * DVector::from_column_slice(&d.beta);
            Ok(kl_with_factor(&cp, &mp, &truth.cov, logdet_q, &truth.mean))
        })
        .collect::<Result<Vec<f64>>>()?;
    summarize(values)
}

/// As [`empirical_kl`] for draws sharing one ratio `δ² = τ²/σ²`, so
/// `Σ_P = σ² K` with a fixed `K = M̃ + δ² I`. `K` is factored once and
/// each draw costs `O(p²)`.
pub fn empirical_kl_scaled(draws: &[KlDraw], delta2: f64, model: &CollapsedModel, truth: &GaussianSpec) -> Result<KlSummary> {
    check_model(model, truth, draws)?;
    for d in draws {
        if (d.tau2 - delta2 * d.sigma2).abs() > 1e-12 * d.tau2.abs().max(f64::MIN_POSITIVE) {
            return invalid("draws do not share the given delta2");
        }
    }
    let n = truth.dim();
    let mut k = model.m_tilde.clone();
    for i in 0..n {
        k[(i, i)] += delta2;
    }
    let ck = chol(&k)?;
    let tr = ck.solve(&truth.cov).trace();
    let logdet_ratio = log_det(&chol(&truth.cov)?) - log_det(&ck);
    let kinv_x = ck.solve(&model.x);
    let xtkx = model.x.transpose() * &kinv_x;
    let xtkm = kinv_x.transpose() * &truth.mean;
    let mkm = truth.mean.dot(&ck.solve(&truth.mean));
    let nf = n as f64;
    let values = draws
        .iter()
        .map(|d| {
            let b = DVector::from_column_slice(&d.beta);
            let quad = b.dot(&(&xtkx * &b)) - 2.0 * b.dot(&xtkm) + mkm;
            let s = d.sigma2;
            (0.5 * (tr / s - (logdet_ratio - nf * s.ln()) + quad / s - nf)).max(0.0)
        })
        .collect();
    summarize(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn zero_for_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = GaussianSpec::new(DVector::from_fn(6, |_, _| rng.random()), random_spd(6, &mut rng)).unwrap();
        assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-10);
    }

    #[test]
    fn one_dimensional_closed_form() {
        let p = GaussianSpec::new(DVector::from_element(1, 0.3), DMatrix::identity(1, 1)).unwrap();
        let q = GaussianSpec::new(DVector::from_element(1, 1.1), DMatrix::identity(1, 1)).unwrap();
        assert!((kl_divergence(&p, &q).unwrap() - 0.8f64.powi(2) / 2.0).abs() < 1e-12);
        // unequal variances: ½[s_q/s_p − ln(s_q/s_p) − 1]
        let q = GaussianSpec::new(DVector::from_element(1, 0.3), DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert!((kl_divergence(&p, &q).unwrap() - 0.5 * (2.0 - 2f64.ln() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let p = GaussianSpec::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let q = GaussianSpec::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        assert!(kl_divergence(&q, &p).is_err());
        assert!(GaussianSpec::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 1.0])).is_err());
    }

    #[test]
    fn scaled_path_matches_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let model = CollapsedModel {
            x: DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random() }),
            m_tilde: {
                let m = random_spd(n, &mut rng);
                let d = m.diagonal().map(|v| 1.0 / v.sqrt());
                DMatrix::from_fn(n, n, |i, j| m[(i, j)] * d[i] * d[j])
            },
        };
        let truth = GaussianSpec::new(DVector::from_fn(n, |_, _| rng.random()), random_spd(n, &mut rng)).unwrap();
        let delta2 = 0.15;
        let draws: Vec<KlDraw> = (0..20)
            .map(|_| {
                let s = 0.5 + rng.random::<f64>();
                KlDraw { beta: vec![rng.random(), rng.random()], sigma2: s, tau2: delta2 * s }
            })
            .collect();
        let a = empirical_kl(&draws, &model, &truth).unwrap();
        let b = empirical_kl_scaled(&draws, delta2, &model, &truth).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn truth_draws_give_zero() {
        let locs = LocationSet::new(vec![[0.0, 0.0], [0.5, 0.1], [0.2, 0.9]]).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.1, 1.0, -0.4, 1.0, 2.0]);
        let truth = collapsed_truth(&locs, &x, &[1.0, -5.0], 2.0, 0.2, 16.0).unwrap();
        let kernel = KernelSpec::exponential(16.0).unwrap();
        let m = DMatrix::from_fn(3, 3, |i, j| kernel.corr_between(locs.coord(i), locs.coord(j)));
        let model = CollapsedModel { x, m_tilde: m };
        let draws = vec![KlDraw { beta: vec![1.0, -5.0], sigma2: 2.0, tau2: 0.2 }];
        let s = empirical_kl(&draws, &model, &truth).unwrap();
        assert!(s.mean.abs() < 1e-10 && s.lo95.abs() < 1e-10 && s.hi95.abs() < 1e-10);
        assert!(s.degenerate);
    }

    #[test]
    fn invariant_under_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 5;
        let p = GaussianSpec::new(DVector::from_fn(n, |_, _| rng.random()), random_spd(n, &mut rng)).unwrap();
        let q = GaussianSpec::new(DVector::from_fn(n, |_, _| rng.random()), random_spd(n, &mut rng)).unwrap();
        let r = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5).qr().q();
        let rot = |g: &GaussianSpec| {
            let c = &r * g.cov() * r.transpose();
            GaussianSpec::new(&r * g.mean(), (&c + c.transpose()) * 0.5).unwrap()
        };
        let a = kl_divergence(&p, &q).unwrap();
        let b = kl_divergence(&rot(&p), &rot(&q)).unwrap();
        assert!((a - b).abs() < 1e-9 * a.max(1.0));
    }
}
