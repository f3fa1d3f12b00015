use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{sample_inv_gamma, BetaPrior};
use crate::error::{invalid, Error, Result};
use crate::nngp_factor::NNGPFactor;
use crate::rng::{domain, substream};
use crate::sparse_solver::{assemble_normal_equations, assemble_rhs, cg_solve, CgConfig, SparseSym, SymOperator};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CgDiagnostics {
    pub iters: usize,
    pub rel_residual: f64,
}

/// Joint posterior `NIG(γ̂, (X*ᵀX*)⁻¹, a*, b*)` of `γ = [β; w]` and σ² for
/// fixed `(φ, δ²)`.
#[derive(Clone, Debug)]
pub struct NIGPosterior {
    gamma_hat: Vec<f64>,
    sys: SparseSym,
    factor: NNGPFactor,
    prior: BetaPrior,
    a_star: f64,
    b_star: f64,
    delta2: f64,
    diagnostics: CgDiagnostics,
}

impl NIGPosterior {
    pub fn n(&self) -> usize {
        self.sys.n()
    }

    pub fn p(&self) -> usize {
        self.sys.p()
    }

    pub fn gamma_hat(&self) -> &[f64] {
        &self.gamma_hat
    }

    pub fn beta_hat(&self) -> &[f64] {
        &self.gamma_hat[..self.p()]
    }

    pub fn w_hat(&self) -> &[f64] {
        &self.gamma_hat[self.p()..]
    }

    pub fn sys(&self) -> &SparseSym {
        &self.sys
    }

    pub fn factor(&self) -> &NNGPFactor {
        &self.factor
    }

    pub fn prior(&self) -> &BetaPrior {
        &self.prior
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
        self.factor.phi()
    }

    pub fn diagnostics(&self) -> CgDiagnostics {
        self.diagnostics
    }

    /// Posterior mean of σ², `b* / (a* − 1)` (infinite when `a* ≤ 1`).
    pub fn sigma2_mean(&self) -> f64 {
        if self.a_star > 1.0 {
            self.b_star / (self.a_star - 1.0)
        } else {
            f64::INFINITY
        }
    }

    /// Solves `X*ᵀX* v = rhs`.
    pub fn solve(&self, rhs: &[f64], cfg: &CgConfig) -> Result<(Vec<f64>, CgDiagnostics)> {
        let out = cg_solve(&self.sys, rhs, cfg)?;
        Ok((out.x, CgDiagnostics { iters: out.iters, rel_residual: out.rel_residual }))
    }

    /// `X*ᵀ u` for `u = [u₁ (n); u₂ (p, proper prior only); u₃ (n)]`,
    /// computed blockwise.
    fn x_star_t(&self, u1: &[f64], u2: Option<&[f64]>, u3: &[f64]) -> Vec<f64> {
        let inv_sd = (1.0 / self.delta2).sqrt();
        let p = self.p();
        let mut top = self.sys.xt_times(u1) * inv_sd;
        if let (Some(u2), Some(l_inv)) = (u2, self.prior.l_inv()) {
            top += l_inv.transpose() * DVector::from_column_slice(u2);
        }
        // (I − A)ᵀ D^{-1/2} u₃, scattered row by row
        let d = self.factor.d();
        let scaled: Vec<f64> = u3.iter().zip(d).map(|(u, d)| u / d.sqrt()).collect();
        let mut bottom = scaled.clone();
        let a = self.factor.a();
        for (i, s) in scaled.iter().enumerate() {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                bottom[j] -= v * s;
            }
        }
        let mut out = Vec::with_capacity(p + self.n());
        out.extend_from_slice(top.as_slice());
        out.extend(bottom.iter().zip(u1).map(|(b, u)| b + inv_sd * u));
        out
    }
}

/// Fits the conjugate latent model: assembles `X*ᵀX*`, solves for `γ̂` by CG
/// and forms `a* = a_σ + n/2`,
/// `b* = b_σ + ½[‖y − Xβ̂ − ŵ‖²/δ² + (β̂−μ_β)ᵀV_β⁻¹(β̂−μ_β) + ŵᵀ(I−A)ᵀD⁻¹(I−A)ŵ]`.
pub fn fit_latent(
    x: &DMatrix<f64>,
    y: &[f64],
    factor: &NNGPFactor,
    delta2: f64,
    prior: &BetaPrior,
    cfg: &CgConfig,
) -> Result<NIGPosterior> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response"));
    }
    let sys = assemble_normal_equations(x, factor, delta2, prior)?;
    let rhs = assemble_rhs(x, y, factor, delta2, prior)?;
    let sol = cg_solve(&sys, &rhs, cfg)?;
    let (n, p) = x.shape();
    let gamma_hat = sol.x;
    let beta = DVector::from_column_slice(&gamma_hat[..p]);
    let w = &gamma_hat[p..];
    let xb = x * &beta;
    let resid: f64 = (0..n).map(|i| (y[i] - xb[i] - w[i]).powi(2)).sum();
    let b_star = prior.b_sigma() + 0.5 * (resid / delta2 + prior.quadratic(&beta) + factor.quadratic(w));
    let a_star = prior.a_sigma() + n as f64 / 2.0;
    log::debug!("latent fit: n = {n}, p = {p}, cg iters = {}, residual = {:.3e}", sol.iters, sol.rel_residual);
    Ok(NIGPosterior {
        gamma_hat,
        sys,
        factor: factor.clone(),
        prior: prior.clone(),
        a_star,
        b_star,
        delta2,
        diagnostics: CgDiagnostics { iters: sol.iters, rel_residual: sol.rel_residual },
    })
}

/// Independent draws of `(β, w, σ², τ²)` from the joint posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    n: usize,
    p: usize,
    delta2: f64,
    seed: u64,
    sigma2: Vec<f64>,
    tau2: Vec<f64>,
    beta: Vec<f64>,
    w: Vec<f64>,
    diagnostics: Vec<CgDiagnostics>,
}

impl PosteriorDraws {
    /// Assembles draws from flat row-major `beta` (L × p) and `w` (L × n).
    pub fn from_parts(n: usize, p: usize, delta2: f64, seed: u64, sigma2: Vec<f64>, beta: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        let l = sigma2.len();
        if beta.len() != l * p || w.len() != l * n {
            return Err(Error::DimensionMismatch("draw arrays disagree with (L, n, p)".into()));
        }
        if sigma2.iter().any(|&s| !(s > 0.0)) {
            return invalid("sigma2 draws must be positive");
        }
        let tau2 = sigma2.iter().map(|s| delta2 * s).collect();
        Ok(Self { n, p, delta2, seed, sigma2, tau2, beta, w, diagnostics: vec![CgDiagnostics::default(); l] })
    }

    pub fn len(&self) -> usize {
        self.sigma2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma2.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn delta2(&self) -> f64 {
        self.delta2
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn tau2(&self) -> &[f64] {
        &self.tau2
    }

    pub fn beta(&self, l: usize) -> &[f64] {
        &self.beta[l * self.p..(l + 1) * self.p]
    }

    pub fn w(&self, l: usize) -> &[f64] {
        &self.w[l * self.n..(l + 1) * self.n]
    }

    pub fn diagnostics(&self) -> &[CgDiagnostics] {
        &self.diagnostics
    }

    /// Draw values of one component of `γ = [β; w]`.
    pub fn gamma_component(&self, k: usize) -> Vec<f64> {
        (0..self.len())
            .map(|l| if k < self.p { self.beta(l)[k] } else { self.w(l)[k - self.p] })
            .collect()
    }
}

/// Draws `L` samples: `σ² ~ IG(a*, b*)`, `u ~ N(0, σ² I)`, `v` solving
/// `X*ᵀX* v = X*ᵀ u` by CG, `γ = γ̂ + v`. Draw `l` uses its own substream of
/// `seed`, so the output is independent of scheduling.
pub fn sample_latent(post: &NIGPosterior, draws: usize, seed: u64, cfg: &CgConfig) -> Result<PosteriorDraws> {
    let (n, p) = (post.n(), post.p());
    let proper = !post.prior.is_flat();
    let results: Vec<(f64, Vec<f64>, CgDiagnostics)> = (0..draws)
        .into_par_iter()
        .map(|l| {
            let mut rng = substream(seed, domain::POSTERIOR, l as u64);
            let sigma2 = sample_inv_gamma(post.a_star, post.b_star, &mut rng)?;
            let sd = sigma2.sqrt();
            let mut normals = |k: usize| -> Vec<f64> {
                (0..k).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); sd * z }).collect()
            };
            let u1 = normals(n);
            let u2 = if proper { Some(normals(p)) } else { None };
            let u3 = normals(n);
            let rhs = post.x_star_t(&u1, u2.as_deref(), &u3);
            let (v, diag) = post.solve(&rhs, cfg).map_err(|e| {
                log::warn!("posterior draw {l} failed: {e}");
                e
            })?;
            let gamma: Vec<f64> = post.gamma_hat.iter().zip(&v).map(|(g, v)| g + v).collect();
            Ok((sigma2, gamma, diag))
        })
        .collect::<Result<_>>()?;

    let mut out = PosteriorDraws {
        n,
        p,
        delta2: post.delta2,
        seed,
        sigma2: Vec::with_capacity(draws),
        tau2: Vec::with_capacity(draws),
        beta: Vec::with_capacity(draws * p),
        w: Vec::with_capacity(draws * n),
        diagnostics: Vec::with_capacity(draws),
    };
    for (s2, gamma, diag) in results {
        out.sigma2.push(s2);
        out.tau2.push(post.delta2 * s2);
        out.beta.extend_from_slice(&gamma[..p]);
        out.w.extend_from_slice(&gamma[p..]);
        out.diagnostics.push(diag);
    }
    Ok(out)
}

impl SymOperator for NIGPosterior {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.sys.apply(x, out)
    }

    fn diagonal(&self) -> Vec<f64> {
        self.sys.diagonal()
    }
}
