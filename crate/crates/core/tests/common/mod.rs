//! Independent dense oracles shared by the integration tests.
#![allow(dead_code)]

use conjnngp::conjugate_models::BetaPrior;
use conjnngp::geometry::{dist, order_locations, LocationSet, OrderingStrategy};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` uniform points on the unit square, coordinate-ordered.
pub fn random_locs(n: usize, seed: u64) -> LocationSet {
    let mut r = rng(seed);
    let raw = (0..n).map(|_| [r.random::<f64>(), r.random::<f64>()]).collect();
    order_locations(&LocationSet::new(raw).unwrap(), OrderingStrategy::Coordinate)
}

/// Dense exponential correlation, evaluated directly from distances.
pub fn dense_corr(locs: &LocationSet, phi: f64) -> DMatrix<f64> {
    let n = locs.len();
    DMatrix::from_fn(n, n, |i, j| (-phi * dist(locs.coord(i), locs.coord(j))).exp())
}

/// Intercept plus one uniform covariate, and a response with spatial signal.
pub fn regression_data(locs: &LocationSet, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let n = locs.len();
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { r.random::<f64>() * 2.0 - 1.0 });
    let y = (0..n)
        .map(|i| {
            let [a, b] = locs.coord(i);
            1.0 - 2.0 * x[(i, 1)] + (4.0 * a).sin() * (3.0 * b).cos() + 0.3 * (r.random::<f64>() - 0.5)
        })
        .collect();
    (x, y)
}

pub struct DenseFit {
    pub gamma: DVector<f64>,
    pub a_star: f64,
    pub b_star: f64,
    /// `X*ᵀX*` of the explicitly stacked system.
    pub gram: DMatrix<f64>,
}

/// Conjugate latent fit with the full process: stacks
/// `X* = [X/δ, I/δ; L_β⁻¹, 0; 0, L_M⁻¹]`, `y* = [y/δ; L_β⁻¹μ; 0]` with
/// `M = L_M L_Mᵀ` and solves the least-squares problem by QR.
pub fn dense_latent_fit(x: &DMatrix<f64>, y: &[f64], m: &DMatrix<f64>, delta2: f64, prior: &BetaPrior) -> DenseFit {
    let (n, p) = x.shape();
    let l_m_inv = m.clone().cholesky().unwrap().l().try_inverse().unwrap();
    let prior_rows = if prior.is_flat() { 0 } else { p };
    let rows = 2 * n + prior_rows;
    let mut xs = DMatrix::zeros(rows, p + n);
    let mut ys = DVector::zeros(rows);
    let sd = delta2.sqrt();
    for i in 0..n {
        for j in 0..p {
            xs[(i, j)] = x[(i, j)] / sd;
        }
        xs[(i, p + i)] = 1.0 / sd;
        ys[i] = y[i] / sd;
    }
    if !prior.is_flat() {
        let l_inv = prior.cov().unwrap().clone().cholesky().unwrap().l().try_inverse().unwrap();
        let rhs = &l_inv * prior.mean().unwrap();
        for r in 0..p {
            for c in 0..p {
                xs[(n + r, c)] = l_inv[(r, c)];
            }
            ys[n + r] = rhs[r];
        }
    }
    let off = n + prior_rows;
    for r in 0..n {
        for c in 0..n {
            xs[(off + r, p + c)] = l_m_inv[(r, c)];
        }
    }
    let qr = xs.clone().qr();
    let qty = qr.q().transpose() * &ys;
    let gamma = qr.r().solve_upper_triangular(&qty).unwrap();
    let resid = &ys - &xs * &gamma;
    DenseFit {
        a_star: prior.a_sigma() + n as f64 / 2.0,
        b_star: prior.b_sigma() + 0.5 * resid.norm_squared(),
        gram: xs.transpose() * &xs,
        gamma,
    }
}

/// Dense conjugate response fit with `K = M + δ²I`:
/// returns `(μ*, V*, a*, b*)`.
pub fn dense_response_fit(
    x: &DMatrix<f64>,
    y: &[f64],
    m: &DMatrix<f64>,
    delta2: f64,
    prior: &BetaPrior,
) -> (DVector<f64>, DMatrix<f64>, f64, f64) {
    let n = x.nrows();
    let k = m + DMatrix::identity(n, n) * delta2;
    let k_inv = k.try_inverse().unwrap();
    let yv = DVector::from_column_slice(y);
    let (v0_inv, m0) = match (prior.precision(), prior.mean()) {
        (Some(pr), Some(mu)) => (pr.clone(), mu.clone()),
        _ => (DMatrix::zeros(x.ncols(), x.ncols()), DVector::zeros(x.ncols())),
    };
    let vs_inv = &v0_inv + x.transpose() * &k_inv * x;
    let vs = vs_inv.clone().try_inverse().unwrap();
    let mus = &vs * (&v0_inv * &m0 + x.transpose() * &k_inv * &yv);
    let b = prior.b_sigma() + 0.5 * ((m0.transpose() * &v0_inv * &m0)[0] + (yv.transpose() * &k_inv * &yv)[0] - (mus.transpose() * &vs_inv * &mus)[0]);
    (mus, vs, prior.a_sigma() + n as f64 / 2.0, b)
}

/// Exhaustive `k` nearest of `q` among `pts[..limit]`, sorted by
/// (squared distance, index).
pub fn brute_nearest(pts: &[[f64; 2]], q: [f64; 2], k: usize, limit: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = (0..limit)
        .map(|j| {
            let (dx, dy) = (pts[j][0] - q[0], pts[j][1] - q[1]);
            (dx * dx + dy * dy, j)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|t| t.1).collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

/// Asymptotic Kolmogorov p-value for a one-sample KS statistic.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// Two-sided KS statistic of `sample` against `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
