use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{sample_inv_gamma, BetaPrior};
use crate::error::{invalid, Error, Result};
use crate::nngp_factor::{FactorTarget, NNGPFactor, PredictionFactor};
use crate::rng::{domain, substream};

/// `NIG(μ*, V*, a*, b*)` posterior of `(β, σ²)` under the response model,
/// where the outcome covariance is `σ² K̃` with `K̃⁻¹ = (I−A)ᵀD⁻¹(I−A)`.
///
/// The spatial effect is integrated out, so there is no latent field to
/// recover; only the regression and variance parameters are inferred.
#[derive(Clone, Debug)]
pub struct ResponsePosterior {
    mu_star: DVector<f64>,
    v_star: DMatrix<f64>,
    v_star_inv: DMatrix<f64>,
    a_star: f64,
    b_star: f64,
    delta2: f64,
    phi: f64,
    residual: Vec<f64>,
}

impl ResponsePosterior {
    pub fn mu_star(&self) -> &DVector<f64> {
        &self.mu_star
    }

    pub fn v_star(&self) -> &DMatrix<f64> {
        &self.v_star
    }

    pub fn v_star_inv(&self) -> &DMatrix<f64> {
        &self.v_star_inv
    }

    pub fn a_star(&self) -> f64 {
        self.a_star
    }

    pub fn b_star(&self) -> f64 {
        self.b_star
    }

    pub fn delta2(&self) -> f64 {
        self.delta2
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// `y − X μ*` on the training locations.
    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    /// Kriging predictor `X_u μ* + A_u (y − X μ*)`, with `A_u` built on the
    /// nugget-augmented local covariances.
    pub fn predict_mean(&self, xu: &DMatrix<f64>, pf: &PredictionFactor) -> Result<Vec<f64>> {
        match pf.target() {
            FactorTarget::Response { delta2 } if delta2 == self.delta2 => {}
            _ => return invalid("response prediction needs a response-target factor with the fitted delta2"),
        }
        if pf.phi() != self.phi {
            return invalid(format!("prediction factor phi {} differs from fitted phi {}", pf.phi(), self.phi));
        }
        if xu.nrows() != pf.len() || xu.ncols() != self.mu_star.len() || pf.n_train() != self.residual.len() {
            return Err(Error::DimensionMismatch("prediction design, factor and posterior disagree".into()));
        }
        let trend = xu * &self.mu_star;
        let krig = pf.a_u().matvec(&self.residual);
        Ok(trend.iter().zip(krig).map(|(t, k)| t + k).collect())
    }
}

/// Exact conjugate update:
/// `V*⁻¹ = V⁻¹ + XᵀK̃⁻¹X`, `μ* = V*(V⁻¹μ + XᵀK̃⁻¹y)`, `a* = a_σ + n/2`,
/// `b* = b_σ + ½(μᵀV⁻¹μ + yᵀK̃⁻¹y − μ*ᵀV*⁻¹μ*)`.
/// `K̃⁻¹` is applied through the whitening `D^{-1/2}(I−A)`, so only `p × p`
/// dense algebra is needed.
pub fn fit_response(x: &DMatrix<f64>, y: &[f64], factor: &NNGPFactor, prior: &BetaPrior) -> Result<ResponsePosterior> {
    let FactorTarget::Response { delta2 } = factor.target() else {
        return invalid("fit_response needs a response-target factor");
    };
    let (n, p) = x.shape();
    if y.len() != n || factor.len() != n {
        return Err(Error::DimensionMismatch(format!("X is {n}×{p}, y has {}, factor has {}", y.len(), factor.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response"));
    }
    prior.check_dim(p, n)?;
    let whiten = |v: &[f64]| -> Vec<f64> {
        factor.apply_i_minus_a(v).iter().zip(factor.d()).map(|(r, d)| r / d.sqrt()).collect()
    };
    let yt = DVector::from_vec(whiten(y));
    let mut xt = DMatrix::zeros(n, p);
    for j in 0..p {
        xt.set_column(j, &DVector::from_vec(whiten(x.column(j).as_slice())));
    }

    let mut v_star_inv = xt.transpose() * &xt;
    let mut lin = xt.transpose() * &yt;
    if let (Some(prec), Some(pm)) = (prior.precision(), prior.precision_mean()) {
        v_star_inv += prec;
        lin += pm;
    }
    let v_star_inv = (&v_star_inv + v_star_inv.transpose()) * 0.5;
    let Some(chol) = v_star_inv.clone().cholesky() else {
        return Err(Error::NotPositiveDefinite { index: 0 });
    };
    let mu_star = chol.solve(&lin);
    let v_star = chol.inverse();
    let b_star = prior.b_sigma() + 0.5 * (prior.mean_quadratic() + yt.norm_squared() - mu_star.dot(&lin));
    if !(b_star > 0.0) {
        return Err(Error::NonFinite("b_star"));
    }
    let fitted = x * &mu_star;
    let residual = y.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
    Ok(ResponsePosterior {
        mu_star,
        v_star,
        v_star_inv,
        a_star: prior.a_sigma() + n as f64 / 2.0,
        b_star,
        delta2,
        phi: factor.phi(),
        residual,
    })
}

/// Draws of `(β, σ²)` from the response posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseDraws {
    pub sigma2: Vec<f64>,
    pub tau2: Vec<f64>,
    /// Row-major `L × p`.
    pub beta: Vec<f64>,
    pub p: usize,
    pub seed: u64,
}

impl ResponseDraws {
    pub fn len(&self) -> usize {
        self.sigma2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma2.is_empty()
    }

    pub fn beta(&self, l: usize) -> &[f64] {
        &self.beta[l * self.p..(l + 1) * self.p]
    }
}

/// `σ² ~ IG(a*, b*)`, then `β ~ N(μ*, σ² V*)`.
pub fn sample_response(post: &ResponsePosterior, draws: usize, seed: u64) -> Result<ResponseDraws> {
    let p = post.mu_star.len();
    let Some(chol) = post.v_star.clone().cholesky() else {
        return Err(Error::NotPositiveDefinite { index: 0 });
    };
    let l_star = chol.l();
    let rows: Vec<(f64, Vec<f64>)> = (0..draws)
        .into_par_iter()
        .map(|l| {
            let mut rng = substream(seed, domain::RESPONSE, l as u64);
            let sigma2 = sample_inv_gamma(post.a_star, post.b_star, &mut rng)?;
            let z = DVector::from_iterator(p, (0..p).map(|_| StandardNormal.sample(&mut rng)));
            let beta = &post.mu_star + (&l_star * z) * sigma2.sqrt();
            Ok((sigma2, beta.as_slice().to_vec()))
        })
        .collect::<Result<_>>()?;
    let mut out = ResponseDraws { sigma2: Vec::new(), tau2: Vec::new(), beta: Vec::new(), p, seed };
    for (s2, b) in rows {
        out.tau2.push(post.delta2 * s2);
        out.sigma2.push(s2);
        out.beta.extend(b);
    }
    Ok(out)
}
