//! Exact Normal–Inverse-Gamma posteriors for the conjugate latent and
//! response NNGP models.

mod latent;
mod prior;
mod response;

pub use latent::{fit_latent, sample_latent, CgDiagnostics, NIGPosterior, PosteriorDraws};
pub use prior::BetaPrior;
pub use response::{fit_response, sample_response, ResponseDraws, ResponsePosterior};

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{invalid, Result};

/// One draw from `IG(shape, scale)` (density ∝ x^(−a−1) e^(−b/x)).
pub(crate) fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    let Ok(g) = Gamma::new(shape, 1.0) else {
        return invalid(format!("bad inverse-gamma shape {shape}"));
    };
    Ok(scale / g.sample(rng))
}
