//! Correlation kernels, variance parameters and hyperparameter grids.
//!
//! Kernels are evaluated on the correlation scale: the covariance is
//! `σ² M` with `M(s, s') = exp(-φ ‖s − s'‖)`, so every sparse factor built
//! from a kernel is free of σ².

use crate::error::{invalid, Error, Result};
use crate::geometry::LocationSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelFamily {
    Exponential,
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" => Ok(Self::Exponential),
            other => Err(Error::InvalidInput(format!("unsupported kernel family `{other}`"))),
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("exponential")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    phi: f64,
}

impl KernelSpec {
    pub fn exponential(phi: f64) -> Result<Self> {
        Self::new(KernelFamily::Exponential, phi)
    }

    pub fn new(family: KernelFamily, phi: f64) -> Result<Self> {
        if !(phi > 0.0 && phi.is_finite()) {
            return invalid(format!("spatial decay phi must be positive, got {phi}"));
        }
        Ok(Self { family, phi })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Correlation at distance `dist`; negative distances are rejected.
    pub fn corr(&self, dist: f64) -> Result<f64> {
        if !(dist >= 0.0) {
            return invalid(format!("distance must be nonnegative, got {dist}"));
        }
        Ok(self.corr_unchecked(dist))
    }

    #[inline]
    pub(crate) fn corr_unchecked(&self, dist: f64) -> f64 {
        match self.family {
            KernelFamily::Exponential => (-self.phi * dist).exp(),
        }
    }

    #[inline]
    pub(crate) fn corr_between(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        self.corr_unchecked(crate::geometry::dist(a, b))
    }
}

/// Partial sill and noise-to-sill ratio; `tau2 = delta2 * sigma2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceSpec {
    sigma2: f64,
    delta2: f64,
}

impl VarianceSpec {
    pub fn new(sigma2: f64, delta2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) || !(delta2 > 0.0 && delta2.is_finite()) {
            return invalid(format!("sigma2 and delta2 must be positive, got {sigma2}, {delta2}"));
        }
        Ok(Self { sigma2, delta2 })
    }

    pub fn from_components(sigma2: f64, tau2: f64) -> Result<Self> {
        Self::new(sigma2, tau2 / sigma2)
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn delta2(&self) -> f64 {
        self.delta2
    }

    pub fn tau2(&self) -> f64 {
        self.delta2 * self.sigma2
    }
}

/// Candidate values of `(φ, δ²)`, both ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperGrid {
    phis: Vec<f64>,
    delta2s: Vec<f64>,
}

pub const DELTA2_LOWER: f64 = 0.001;
pub const DELTA2_UPPER: f64 = 1000.0;

impl HyperGrid {
    pub fn new(mut phis: Vec<f64>, mut delta2s: Vec<f64>) -> Result<Self> {
        if phis.is_empty() || delta2s.is_empty() {
            return invalid("grid axes must be nonempty");
        }
        if phis.iter().chain(&delta2s).any(|v| !(*v > 0.0 && v.is_finite())) {
            return invalid("grid entries must be positive and finite");
        }
        phis.sort_by(f64::total_cmp);
        delta2s.sort_by(f64::total_cmp);
        phis.dedup();
        delta2s.dedup();
        Ok(Self { phis, delta2s })
    }

    /// Log-spaced axes over `[lo, hi]` with the given level counts.
    pub fn log_spaced(phi: (f64, f64, usize), delta2: (f64, f64, usize)) -> Result<Self> {
        Self::new(log_space(phi.0, phi.1, phi.2)?, log_space(delta2.0, delta2.1, delta2.2)?)
    }

    pub fn phis(&self) -> &[f64] {
        &self.phis
    }

    pub fn delta2s(&self) -> &[f64] {
        &self.delta2s
    }

    pub fn len(&self) -> usize {
        self.phis.len() * self.delta2s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in row-major order `(φ index, δ² index)`.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let nd = self.delta2s.len();
        (0..self.len()).map(move |k| (k / nd, k % nd))
    }

    pub fn phi_bounds(&self) -> (f64, f64) {
        (self.phis[0], *self.phis.last().unwrap())
    }

    pub fn delta2_bounds(&self) -> (f64, f64) {
        (self.delta2s[0], *self.delta2s.last().unwrap())
    }
}

/// `levels` points log-uniformly spaced on `[lo, hi]`; one level gives the
/// geometric mean.
pub fn log_space(lo: f64, hi: f64, levels: usize) -> Result<Vec<f64>> {
    if levels == 0 || !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return invalid(format!("bad log-spaced range [{lo}, {hi}] with {levels} levels"));
    }
    if levels == 1 {
        return Ok(vec![(lo * hi).sqrt()]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (levels - 1) as f64;
    Ok((0..levels)
        .map(|k| match k {
            0 => lo,
            k if k == levels - 1 => hi,
            k => (a + step * k as f64).exp(),
        })
        .collect())
}

/// Default search grid: φ over `[3, 300] / maxdist(S)`, δ² over
/// `[0.001, 1000]`, both log-spaced.
pub fn default_grid(locs: &LocationSet, levels_phi: usize, levels_delta: usize) -> Result<HyperGrid> {
    if locs.len() < 2 {
        return invalid("default grid needs at least two locations");
    }
    let maxdist = locs.maxdist();
    if !(maxdist > 0.0) {
        return invalid("all locations coincide (maxdist = 0)");
    }
    HyperGrid::log_spaced(
        (3.0 / maxdist, 300.0 / maxdist, levels_phi),
        (DELTA2_LOWER, DELTA2_UPPER, levels_delta),
    )
}

/// Axis window of the refined grid, in log space.
///
/// The window is `shrink` times the old log-width. Where possible it is placed
/// so that `best` is itself a node (grid step multiples away from the bounds),
/// preferring `best` at the center, and shifted to stay inside `[lo, hi]`.
fn refine_axis(lo: f64, hi: f64, best: f64, shrink: f64, levels: usize) -> Result<Vec<f64>> {
    if levels == 1 {
        return Ok(vec![best]);
    }
    let (a, b, c) = (lo.ln(), hi.ln(), best.ln());
    let width = (b - a) * shrink;
    if width == 0.0 {
        return Ok(vec![best]);
    }
    let step = width / (levels - 1) as f64;
    let eps = 1e-9;
    let h_min = ((levels - 1) as f64 - (b - c) / step - eps).ceil().max(0.0);
    let h_max = ((c - a) / step + eps).floor().min((levels - 1) as f64);
    let start = if h_min <= h_max {
        let h = ((levels - 1) as f64 / 2.0).round().clamp(h_min, h_max);
        (c - h * step).max(a)
    } else {
        (c - width / 2.0).clamp(a, b - width)
    };
    let end = (start + width).min(b);
    log_space(start.exp(), end.exp(), levels).map(|mut v| {
        // keep `best` bit-exact when it landed on a node
        for x in v.iter_mut() {
            if ((x.ln() - c) / step).abs() < 1e-6 {
                *x = best;
            }
        }
        v
    })
}

/// Shrinks each axis of `grid` around `best` by `shrink` (in log space) and
/// lays `levels` log-spaced points on the new window, clamped to the old bounds.
pub fn refine_grid(grid: &HyperGrid, best: (f64, f64), shrink: f64, levels: usize) -> Result<HyperGrid> {
    if !(shrink > 0.0 && shrink <= 1.0) {
        return invalid(format!("shrink must lie in (0, 1], got {shrink}"));
    }
    let (plo, phi_hi) = grid.phi_bounds();
    let (dlo, dhi) = grid.delta2_bounds();
    let tol = 1e-12;
    if best.0 < plo * (1.0 - tol) || best.0 > phi_hi * (1.0 + tol) || best.1 < dlo * (1.0 - tol) || best.1 > dhi * (1.0 + tol) {
        return invalid("refinement center lies outside the grid bounds");
    }
    HyperGrid::new(
        refine_axis(plo, phi_hi, best.0.clamp(plo, phi_hi), shrink, levels)?,
        refine_axis(dlo, dhi, best.1.clamp(dlo, dhi), shrink, levels)?,
    )
}
