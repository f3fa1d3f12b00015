use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::covariance::KernelSpec;
use crate::error::{invalid, Error, Result};
use crate::geometry::{build_training_neighbors, order_locations, LocationSet, OrderingStrategy};
use crate::nngp_factor::{build_factor, FactorTarget};
use crate::rng::{domain, substream};

/// Largest `n` for the dense Cholesky simulator.
pub const DENSE_CAP: usize = 5000;

/// Generating parameters for `y = Xβ + w + ε` with `X = [1, x₁]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimParams {
    pub beta: [f64; 2],
    pub sigma2: f64,
    pub tau2: f64,
    pub phi: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self { beta: [1.0, -5.0], sigma2: 2.0, tau2: 0.2, phi: 16.0 }
    }
}

impl SimParams {
    fn validate(&self) -> Result<()> {
        if !(self.sigma2 >= 0.0 && self.tau2 >= 0.0 && self.phi > 0.0) || self.beta.iter().any(|b| !b.is_finite()) {
            return invalid(format!("invalid simulation parameters {self:?}"));
        }
        Ok(())
    }
}

/// One simulated data set, rows in generation order.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTruth {
    pub locs: LocationSet,
    pub x: DMatrix<f64>,
    pub w: Vec<f64>,
    pub eps: Vec<f64>,
    pub y: Vec<f64>,
    pub params: SimParams,
    pub seed: u64,
}

impl SimTruth {
    /// `Xβ + w + ε`, evaluated in the same order as when simulating.
    pub fn reconstruct(&self) -> Vec<f64> {
        assemble(&self.x, &self.params.beta, &self.w, &self.eps)
    }
}

fn assemble(x: &DMatrix<f64>, beta: &[f64; 2], w: &[f64], eps: &[f64]) -> Vec<f64> {
    (0..w.len()).map(|i| (x[(i, 0)] * beta[0] + x[(i, 1)] * beta[1]) + w[i] + eps[i]).collect()
}

/// Locations uniform on the unit square and `x₁ ~ N(0, 1)`.
fn design<R: Rng>(n: usize, rng: &mut R) -> Result<(LocationSet, DMatrix<f64>)> {
    let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let x1: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok((LocationSet::new(coords)?, DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x1[i] })))
}

fn normals<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Exact Gaussian-process data: `w ~ N(0, σ² M)` through a dense Cholesky
/// factor of the exponential correlation `M`.
pub fn simulate_gp(n: usize, params: &SimParams, seed: u64) -> Result<SimTruth> {
    if n > DENSE_CAP {
        return Err(Error::DenseCapExceeded { n, cap: DENSE_CAP });
    }
    if n == 0 {
        return invalid("cannot simulate zero locations");
    }
    params.validate()?;
    let mut rng = substream(seed, domain::SIMULATE, 0);
    let (locs, x) = design(n, &mut rng)?;
    let kernel = KernelSpec::exponential(params.phi)?;
    let mut cov = DMatrix::from_fn(n, n, |i, j| kernel.corr_between(locs.coord(i), locs.coord(j)));
    // duplicated locations are measure-zero but keep the factorization alive
    let l = loop {
        if let Some(c) = cov.clone().cholesky() {
            break c.unpack();
        }
        for i in 0..n {
            cov[(i, i)] += 1e-10;
        }
    };
    let z = DVector::from_vec(normals(n, &mut rng));
    let w: Vec<f64> = (l * z).iter().map(|v| v * params.sigma2.sqrt()).collect();
    let eps: Vec<f64> = normals(n, &mut rng).iter().map(|e| e * params.tau2.sqrt()).collect();
    let y = assemble(&x, &params.beta, &w, &eps);
    Ok(SimTruth { locs, x, w, eps, y, params: params.clone(), seed })
}

/// Large-n simulator drawing `w` from the NNGP with `m` neighbors:
/// `w = σ (I − A)⁻¹ D^{1/2} z` by forward substitution in coordinate order.
/// Its covariance is the sparse approximation, not the exact process.
pub fn simulate_nngp(n: usize, params: &SimParams, m: usize, seed: u64) -> Result<SimTruth> {
    if n == 0 {
        return invalid("cannot simulate zero locations");
    }
    params.validate()?;
    let mut rng = substream(seed, domain::SIMULATE, 1);
    let (locs, x) = design(n, &mut rng)?;
    let ordered = order_locations(&locs, OrderingStrategy::Coordinate);
    let graph = build_training_neighbors(&ordered, m)?;
    let factor = build_factor(&ordered, &graph, &KernelSpec::exponential(params.phi)?, FactorTarget::Latent)?;
    let z = normals(n, &mut rng);
    let mut w_ord = vec![0.0; n];
    for i in 0..n {
        let (cols, vals) = factor.a().row(i);
        let mean: f64 = cols.iter().zip(vals).map(|(&j, v)| v * w_ord[j]).sum();
        w_ord[i] = mean + factor.d()[i].sqrt() * z[i];
    }
    let mut w = vec![0.0; n];
    for (k, &raw) in ordered.id_map().iter().enumerate() {
        w[raw] = params.sigma2.sqrt() * w_ord[k];
    }
    let eps: Vec<f64> = normals(n, &mut rng).iter().map(|e| e * params.tau2.sqrt()).collect();
    let y = assemble(&x, &params.beta, &w, &eps);
    Ok(SimTruth { locs, x, w, eps, y, params: params.clone(), seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_reconstructs() {
        let p = SimParams::default();
        let a = simulate_gp(150, &p, 7).unwrap();
        assert_eq!(a, simulate_gp(150, &p, 7).unwrap());
        assert_eq!(a.reconstruct(), a.y);
        assert_ne!(a.y, simulate_gp(150, &p, 8).unwrap().y);
        assert!(a.locs.coords().iter().all(|c| (0.0..1.0).contains(&c[0]) && (0.0..1.0).contains(&c[1])));
    }

    #[test]
    fn dense_cap() {
        assert!(matches!(simulate_gp(DENSE_CAP + 1, &SimParams::default(), 1), Err(Error::DenseCapExceeded { .. })));
    }

    #[test]
    fn independent_limit_recovers_sigma2() {
        let p = SimParams { beta: [0.0, 0.0], sigma2: 2.0, tau2: 0.0, phi: 1e6 };
        let s = simulate_gp(2000, &p, 3).unwrap();
        let var = s.y.iter().map(|v| v * v).sum::<f64>() / 2000.0;
        // sd of the sample variance is σ²·sqrt(2/n) ≈ 0.063
        assert!((var - 2.0).abs() < 0.25, "{var}");
    }

    #[test]
    fn variogram_decays_exponentially() {
        let p = SimParams { beta: [0.0, 0.0], sigma2: 1.0, tau2: 0.0, phi: 8.0 };
        let bins = [(0.02, 0.06), (0.1, 0.14), (0.25, 0.3)];
        let mut acc = [(0.0, 0usize); 3];
        for seed in 0..4 {
            let s = simulate_gp(600, &p, seed).unwrap();
            for i in 0..600 {
                for j in 0..i {
                    let d = crate::geometry::dist(s.locs.coord(i), s.locs.coord(j));
                    for (b, &(lo, hi)) in bins.iter().enumerate() {
                        if d >= lo && d < hi {
                            acc[b].0 += 0.5 * (s.w[i] - s.w[j]).powi(2);
                            acc[b].1 += 1;
                        }
                    }
                }
            }
        }
        for (b, &(lo, hi)) in bins.iter().enumerate() {
            let gamma = acc[b].0 / acc[b].1 as f64;
            let expect = 1.0 - (-8.0f64 * (lo + hi) / 2.0).exp();
            assert!((gamma - expect).abs() < 0.25 * expect + 0.05, "bin {b}: {gamma} vs {expect}");
        }
    }

    #[test]
    fn nngp_simulator_scale() {
        let p = SimParams { beta: [0.0, 0.0], sigma2: 2.0, tau2: 0.0, phi: 16.0 };
        let s = simulate_nngp(3000, &p, 10, 5).unwrap();
        assert_eq!(s.reconstruct(), s.y);
        let var = s.w.iter().map(|v| v * v).sum::<f64>() / 3000.0;
        assert!(var > 1.0 && var < 3.0, "{var}");
    }
}
