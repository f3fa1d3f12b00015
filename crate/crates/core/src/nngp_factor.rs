//! Sparse nearest-neighbor factors `(A, D)` of a correlation matrix.
//!
//! For a training set ordered `s_1..s_n` with parents `Pa[i]`, row `i` of the
//! strictly lower-triangular `A` holds the kriging weights of `s_i` on its
//! parents and `D[i]` the conditional variance, so that the precision is
//! `(I − A)ᵀ D⁻¹ (I − A)`.
//!
//! Two targets share the construction:
//! * `Latent` approximates the correlation matrix `M` of the latent process;
//!   `D[0] = 1`.
//! * `Response` approximates `K = M + δ² I`, the marginal correlation of the
//!   outcome, by putting δ² on the diagonal of every local covariance before
//!   solving; `D[0] = 1 + δ²`.
//!
//! The response factor is therefore on the scale of `M + δ²I` while the latent
//! factor carries no nugget at all; only the latter may be combined with an
//! explicit noise term.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::covariance::KernelSpec;
use crate::error::{invalid, Error, Result};
use crate::geometry::{GraphKind, LocationSet, NeighborGraph};
use crate::sparse_solver::CsrMatrix;

/// Diagonal jitter tried in turn when a local system is not positive definite.
pub const JITTER_LEVELS: [f64; 3] = [0.0, 1e-10, 1e-8];

/// Smallest accepted training conditional variance, relative to the
/// marginal variance.
const MIN_TRAINING_VARIANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FactorTarget {
    Latent,
    Response { delta2: f64 },
}

impl FactorTarget {
    fn nugget(&self) -> f64 {
        match *self {
            Self::Latent => 0.0,
            Self::Response { delta2 } => delta2,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::Response { delta2 } if !(delta2 >= 0.0 && delta2.is_finite()) => {
                invalid(format!("response target needs delta2 >= 0, got {delta2}"))
            }
            _ => Ok(()),
        }
    }
}

/// Kriging weights and conditional variance of one location on its parents.
fn local_kriging(
    center: [f64; 2],
    parents: &[[f64; 2]],
    kernel: &KernelSpec,
    nugget: f64,
    index: usize,
    training: bool,
) -> Result<(Vec<f64>, f64)> {
    let k = parents.len();
    if k == 0 {
        return Ok((Vec::new(), 1.0 + nugget));
    }
    let c = DVector::from_iterator(k, parents.iter().map(|&p| kernel.corr_between(center, p)));
    let base = DMatrix::from_fn(k, k, |r, s| if r == s { 1.0 } else { kernel.corr_between(parents[r], parents[s]) });
    for jitter in JITTER_LEVELS {
        let mut cpp = base.clone();
        for r in 0..k {
            cpp[(r, r)] += nugget + jitter;
        }
        let Some(chol) = cpp.cholesky() else { continue };
        let w = chol.solve(&c);
        let own = 1.0 + nugget + jitter;
        let d = own - c.dot(&w);
        if !d.is_finite() || w.iter().any(|v| !v.is_finite()) {
            continue;
        }
        if training {
            if d > MIN_TRAINING_VARIANCE * own {
                return Ok((w.as_slice().to_vec(), d));
            }
        } else if d > -1e-10 * own {
            return Ok((w.as_slice().to_vec(), d.max(0.0)));
        }
    }
    Err(Error::NotPositiveDefinite { index })
}

fn assemble_rows(
    nrows: usize,
    ncols: usize,
    graph: &NeighborGraph,
    rows: Vec<(Vec<f64>, f64)>,
) -> (CsrMatrix, Vec<f64>) {
    let mut row_ptr = Vec::with_capacity(nrows + 1);
    row_ptr.push(0);
    let mut cols = Vec::with_capacity(graph.nnz());
    let mut vals = Vec::with_capacity(graph.nnz());
    let mut d = Vec::with_capacity(nrows);
    for (i, (w, di)) in rows.into_iter().enumerate() {
        cols.extend_from_slice(graph.parents(i));
        vals.extend(w);
        row_ptr.push(cols.len());
        d.push(di);
    }
    (CsrMatrix::from_parts(nrows, ncols, row_ptr, cols, vals), d)
}

/// Training factor `(A, D)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NNGPFactor {
    a: CsrMatrix,
    d: Vec<f64>,
    target: FactorTarget,
    phi: f64,
}

/// Builds the training factor row by row: `A[i, Pa[i]] = c(s_i, Pa)ᵀ C(Pa, Pa)⁻¹`
/// and `D[i] = C(s_i, s_i) − c(s_i, Pa)ᵀ C(Pa, Pa)⁻¹ c(Pa, s_i)`.
pub fn build_factor(
    locs: &LocationSet,
    graph: &NeighborGraph,
    kernel: &KernelSpec,
    target: FactorTarget,
) -> Result<NNGPFactor> {
    if graph.kind() != GraphKind::Training {
        return invalid("build_factor needs a training graph");
    }
    if graph.len() != locs.len() {
        return Err(Error::DimensionMismatch(format!("graph has {} rows, {} locations", graph.len(), locs.len())));
    }
    target.validate()?;
    let nugget = target.nugget();
    let rows: Vec<(Vec<f64>, f64)> = (0..locs.len())
        .into_par_iter()
        .map(|i| {
            let pa = graph.parents(i);
            if pa.iter().any(|&j| j >= i) {
                return invalid(format!("parent of location {i} does not precede it"));
            }
            let pcoords: Vec<[f64; 2]> = pa.iter().map(|&j| locs.coord(j)).collect();
            local_kriging(locs.coord(i), &pcoords, kernel, nugget, i, true)
        })
        .collect::<Result<_>>()?;
    let n = locs.len();
    let (a, d) = assemble_rows(n, n, graph, rows);
    Ok(NNGPFactor { a, d, target, phi: kernel.phi() })
}

impl NNGPFactor {
    /// Assembles a factor from parts, checking the structural invariants.
    pub fn from_parts(a: CsrMatrix, d: Vec<f64>, target: FactorTarget, phi: f64) -> Result<Self> {
        let n = d.len();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::DimensionMismatch("A must be n x n".into()));
        }
        for i in 0..n {
            if a.row(i).0.iter().any(|&j| j >= i) {
                return invalid(format!("row {i} of A is not strictly lower triangular"));
            }
        }
        if d.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return invalid("conditional variances must be positive");
        }
        Ok(Self { a, d, target, phi })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn a(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn target(&self) -> FactorTarget {
        self.target
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// `log det` of the approximated matrix, `Σ log D[i]`.
    pub fn log_det(&self) -> f64 {
        self.d.iter().map(|v| v.ln()).sum()
    }

    /// Nonzeros of `I − A`.
    pub fn nnz_i_minus_a(&self) -> usize {
        self.a.nnz() + self.len()
    }

    /// `(I − A) x`.
    pub fn apply_i_minus_a(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.a.matvec(x);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi - *o;
        }
        out
    }

    /// `xᵀ (I − A)ᵀ D⁻¹ (I − A) x`.
    pub fn quadratic(&self, x: &[f64]) -> f64 {
        let r = self.apply_i_minus_a(x);
        r.iter().zip(&self.d).map(|(v, d)| v * v / d).sum()
    }

    /// Dense `(I − A)ᵀ D⁻¹ (I − A)`; small problems only.
    pub fn precision_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut b = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            let (cols, vals) = self.a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                b[(i, j)] -= v;
            }
        }
        let scaled = DMatrix::from_fn(n, n, |i, j| b[(i, j)] / self.d[i].sqrt());
        scaled.transpose() * scaled
    }

    /// Dense `(I − A)⁻¹ D (I − A)⁻ᵀ` by sparse forward substitution.
    pub fn covariance_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        // columns of (I − A)⁻¹ D^½
        let mut g = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let sd = self.d[j].sqrt();
            g[(j, j)] = sd;
            for i in j + 1..n {
                let (cols, vals) = self.a.row(i);
                let mut acc = 0.0;
                for (&k, &v) in cols.iter().zip(vals) {
                    if k >= j {
                        acc += v * g[(k, j)];
                    }
                }
                g[(i, j)] = acc;
            }
        }
        &g * g.transpose()
    }
}

/// Kriging factor of prediction sites on training locations.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionFactor {
    a_u: CsrMatrix,
    d_u: Vec<f64>,
    target: FactorTarget,
    phi: f64,
}

/// Builds `A_u`, `D_u` for prediction sites. With a `Response` target the
/// local covariances carry δ² and `D_u` is the conditional variance of the
/// outcome; with `Latent` it is that of the latent process, in `[0, 1]`.
pub fn build_prediction_factor(
    train: &LocationSet,
    pred: &LocationSet,
    graph: &NeighborGraph,
    kernel: &KernelSpec,
    target: FactorTarget,
) -> Result<PredictionFactor> {
    if graph.kind() != GraphKind::Prediction {
        return invalid("build_prediction_factor needs a prediction graph");
    }
    if graph.len() != pred.len() {
        return Err(Error::DimensionMismatch(format!("graph has {} rows, {} sites", graph.len(), pred.len())));
    }
    target.validate()?;
    let nugget = target.nugget();
    let rows: Vec<(Vec<f64>, f64)> = (0..pred.len())
        .into_par_iter()
        .map(|i| {
            let pa = graph.parents(i);
            if pa.iter().any(|&j| j >= train.len()) {
                return invalid(format!("parent of site {i} is outside the training set"));
            }
            let pcoords: Vec<[f64; 2]> = pa.iter().map(|&j| train.coord(j)).collect();
            local_kriging(pred.coord(i), &pcoords, kernel, nugget, i, false)
        })
        .collect::<Result<_>>()?;
    let (a_u, d_u) = assemble_rows(pred.len(), train.len(), graph, rows);
    Ok(PredictionFactor { a_u, d_u, target, phi: kernel.phi() })
}

impl PredictionFactor {
    pub fn len(&self) -> usize {
        self.d_u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_u.is_empty()
    }

    pub fn n_train(&self) -> usize {
        self.a_u.ncols()
    }

    pub fn a_u(&self) -> &CsrMatrix {
        &self.a_u
    }

    pub fn d_u(&self) -> &[f64] {
        &self.d_u
    }

    pub fn target(&self) -> FactorTarget {
        self.target
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }
}
