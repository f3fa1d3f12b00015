use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug)]
enum Kind {
    Flat,
    Normal {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        precision: DMatrix<f64>,
        precision_mean: DVector<f64>,
        /// `L⁻¹` with `V_β = L Lᵀ`.
        l_inv: DMatrix<f64>,
    },
}

/// NIG prior: `β | σ² ~ N(μ_β, σ² V_β)` or improper flat, `σ² ~ IG(a_σ, b_σ)`.
#[derive(Clone, Debug)]
pub struct BetaPrior {
    kind: Kind,
    a_sigma: f64,
    b_sigma: f64,
}

fn check_ig(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
        return invalid(format!("inverse-gamma hyperparameters must be positive, got a = {a}, b = {b}"));
    }
    Ok(())
}

impl BetaPrior {
    /// Improper flat prior on β. Panics on non-positive IG parameters; use
    /// [`BetaPrior::try_flat`] for untrusted input.
    pub fn flat(a_sigma: f64, b_sigma: f64) -> Self {
        Self::try_flat(a_sigma, b_sigma).expect("invalid inverse-gamma hyperparameters")
    }

    pub fn try_flat(a_sigma: f64, b_sigma: f64) -> Result<Self> {
        check_ig(a_sigma, b_sigma)?;
        Ok(Self { kind: Kind::Flat, a_sigma, b_sigma })
    }

    pub fn normal(mean: DVector<f64>, cov: DMatrix<f64>, a_sigma: f64, b_sigma: f64) -> Result<Self> {
        check_ig(a_sigma, b_sigma)?;
        let p = mean.len();
        if cov.shape() != (p, p) {
            return Err(Error::DimensionMismatch(format!("V_beta must be {p} x {p}")));
        }
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return invalid("V_beta must be symmetric");
        }
        let chol = cov.clone().cholesky().ok_or_else(|| Error::InvalidInput("V_beta is not positive definite".into()))?;
        let l_inv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(p, p))
            .ok_or_else(|| Error::InvalidInput("V_beta is singular".into()))?;
        let precision = l_inv.transpose() * &l_inv;
        let precision_mean = &precision * &mean;
        Ok(Self { kind: Kind::Normal { mean, cov, precision, precision_mean, l_inv }, a_sigma, b_sigma })
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.kind, Kind::Flat)
    }

    pub fn a_sigma(&self) -> f64 {
        self.a_sigma
    }

    pub fn b_sigma(&self) -> f64 {
        self.b_sigma
    }

    pub fn mean(&self) -> Option<&DVector<f64>> {
        match &self.kind {
            Kind::Normal { mean, .. } => Some(mean),
            Kind::Flat => None,
        }
    }

    pub fn cov(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            Kind::Normal { cov, .. } => Some(cov),
            Kind::Flat => None,
        }
    }

    /// `V_β⁻¹`, absent for the flat prior.
    pub fn precision(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            Kind::Normal { precision, .. } => Some(precision),
            Kind::Flat => None,
        }
    }

    /// `V_β⁻¹ μ_β`.
    pub fn precision_mean(&self) -> Option<&DVector<f64>> {
        match &self.kind {
            Kind::Normal { precision_mean, .. } => Some(precision_mean),
            Kind::Flat => None,
        }
    }

    pub fn l_inv(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            Kind::Normal { l_inv, .. } => Some(l_inv),
            Kind::Flat => None,
        }
    }

    /// `(β − μ_β)ᵀ V_β⁻¹ (β − μ_β)`; zero for the flat prior.
    pub fn quadratic(&self, beta: &DVector<f64>) -> f64 {
        match &self.kind {
            Kind::Flat => 0.0,
            Kind::Normal { mean, precision, .. } => {
                let r = beta - mean;
                r.dot(&(precision * &r))
            }
        }
    }

    /// `μ_βᵀ V_β⁻¹ μ_β`.
    pub fn mean_quadratic(&self) -> f64 {
        match &self.kind {
            Kind::Flat => 0.0,
            Kind::Normal { mean, precision_mean, .. } => mean.dot(precision_mean),
        }
    }

    pub(crate) fn check_dim(&self, p: usize, n: usize) -> Result<()> {
        match &self.kind {
            Kind::Flat if p >= n && p > 0 => invalid(format!("flat prior with p = {p} >= n = {n} is not identifiable")),
            Kind::Normal { mean, .. } if mean.len() != p => {
                Err(Error::DimensionMismatch(format!("prior has dimension {}, X has {p} columns", mean.len())))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_prior_algebra() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let mean = DVector::from_vec(vec![1.0, -1.0]);
        let p = BetaPrior::normal(mean.clone(), cov.clone(), 2.0, 1.0).unwrap();
        let inv = cov.clone().try_inverse().unwrap();
        assert!((p.precision().unwrap() - &inv).amax() < 1e-14);
        let linv = p.l_inv().unwrap();
        assert!((linv.transpose() * linv - inv).amax() < 1e-14);
        assert!((p.mean_quadratic() - mean.dot(&(cov.try_inverse().unwrap() * &mean))).abs() < 1e-14);
        assert_eq!(p.quadratic(&mean), 0.0);
    }

    #[test]
    fn invalid_priors() {
        assert!(BetaPrior::try_flat(0.0, 1.0).is_err());
        assert!(BetaPrior::try_flat(2.0, -1.0).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(BetaPrior::normal(DVector::zeros(2), bad, 2.0, 1.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(BetaPrior::normal(DVector::zeros(2), asym, 2.0, 1.0).is_err());
        assert!(BetaPrior::flat(2.0, 1.0).check_dim(3, 3).is_err());
        assert!(BetaPrior::flat(2.0, 1.0).check_dim(0, 1).is_ok());
    }
}
