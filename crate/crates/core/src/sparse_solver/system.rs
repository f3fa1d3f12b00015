use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::cg::SymOperator;
use super::csr::{dot, CsrMatrix, ROW_CHUNK};
use crate::conjugate_models::BetaPrior;
use crate::error::{invalid, Error, Result};
use crate::nngp_factor::{FactorTarget, NNGPFactor};

/// Sparse `(I − A)ᵀ D⁻¹ (I − A) + shift · I`, assembled row by row from the
/// rows of `I − A` without forming any dense `n × n` object.
pub fn precision_csr(factor: &NNGPFactor, shift: f64) -> CsrMatrix {
    let n = factor.len();
    let a = factor.a();
    let d = factor.d();
    // transpose pattern of A: for column j, rows i > j with j ∈ Pa[i]
    let mut counts = vec![0usize; n + 1];
    for &j in a.cols() {
        counts[j + 1] += 1;
    }
    for j in 0..n {
        counts[j + 1] += counts[j];
    }
    let mut t_rows = vec![0usize; a.nnz()];
    let mut t_vals = vec![0.0; a.nnz()];
    let mut fill = counts.clone();
    for i in 0..n {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            t_rows[fill[j]] = i;
            t_vals[fill[j]] = v;
            fill[j] += 1;
        }
    }

    let chunks: Vec<(Vec<usize>, Vec<f64>, Vec<usize>)> = (0..n.div_ceil(ROW_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; n];
            let mut mark = vec![false; n];
            let mut touched: Vec<usize> = Vec::new();
            let (mut cols, mut vals, mut lens) = (Vec::new(), Vec::new(), Vec::new());
            for j in c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(n) {
                // row j of (I − A) contributes 1/d_j · r_j[j] · r_j
                let own = std::iter::once((j, 1.0));
                let later = (counts[j]..counts[j + 1]).map(|k| (t_rows[k], -t_vals[k]));
                for (i, coef) in own.chain(later) {
                    let s = coef / d[i];
                    let (pcols, pvals) = a.row(i);
                    let entries = std::iter::once((i, 1.0)).chain(pcols.iter().zip(pvals).map(|(&k, &v)| (k, -v)));
                    for (k, rk) in entries {
                        if !mark[k] {
                            mark[k] = true;
                            touched.push(k);
                        }
                        acc[k] += s * rk;
                    }
                }
                if shift != 0.0 {
                    if !mark[j] {
                        mark[j] = true;
                        touched.push(j);
                    }
                    acc[j] += shift;
                }
                touched.sort_unstable();
                for &k in &touched {
                    cols.push(k);
                    vals.push(acc[k]);
                    acc[k] = 0.0;
                    mark[k] = false;
                }
                lens.push(touched.len());
                touched.clear();
            }
            (cols, vals, lens)
        })
        .collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let total: usize = chunks.iter().map(|c| c.0.len()).sum();
    let mut cols = Vec::with_capacity(total);
    let mut vals = Vec::with_capacity(total);
    for (c, v, lens) in chunks {
        cols.extend(c);
        vals.extend(v);
        for l in lens {
            row_ptr.push(row_ptr.last().unwrap() + l);
        }
    }
    CsrMatrix::from_parts(n, n, row_ptr, cols, vals)
}

/// The posterior precision `X*ᵀX*` of the augmented latent system, blockwise:
///
/// ```text
/// [ XᵀX/δ² + V_β⁻¹    Xᵀ/δ²                      ]
/// [ X/δ²              I/δ² + (I−A)ᵀD⁻¹(I−A)      ]
/// ```
///
/// The off-diagonal block is never stored twice; products use `X` directly.
#[derive(Clone, Debug)]
pub struct SparseSym {
    n: usize,
    p: usize,
    inv_delta2: f64,
    bb: DMatrix<f64>,
    x: DMatrix<f64>,
    ww: CsrMatrix,
    flat_prior: bool,
}

impl SparseSym {
    /// Raw blocks: `bb` (p × p), `x` (n × p) scaled by `inv_delta2` in the
    /// off-diagonal block, `ww` (n × n, symmetric).
    pub fn from_blocks(bb: DMatrix<f64>, x: DMatrix<f64>, inv_delta2: f64, ww: CsrMatrix, flat_prior: bool) -> Result<Self> {
        let (n, p) = x.shape();
        if bb.shape() != (p, p) || ww.nrows() != n || ww.ncols() != n {
            return Err(Error::DimensionMismatch("inconsistent block shapes".into()));
        }
        Ok(Self { n, p, inv_delta2, bb, x, ww, flat_prior })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn inv_delta2(&self) -> f64 {
        self.inv_delta2
    }

    pub fn bb(&self) -> &DMatrix<f64> {
        &self.bb
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn ww(&self) -> &CsrMatrix {
        &self.ww
    }

    pub fn flat_prior(&self) -> bool {
        self.flat_prior
    }

    /// `Xᵀ w` with a fixed reduction order.
    pub fn xt_times(&self, w: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.p, (0..self.p).map(|j| dot(self.x.column(j).as_slice(), w)))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (n, p) = (self.n, self.p);
        let mut m = DMatrix::zeros(n + p, n + p);
        m.view_mut((0, 0), (p, p)).copy_from(&self.bb);
        let off = &self.x * self.inv_delta2;
        m.view_mut((p, 0), (n, p)).copy_from(&off);
        m.view_mut((0, p), (p, n)).copy_from(&off.transpose());
        m.view_mut((p, p), (n, n)).copy_from(&self.ww.to_dense());
        m
    }
}

impl SymOperator for SparseSym {
    fn dim(&self) -> usize {
        self.n + self.p
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let (p, s) = (self.p, self.inv_delta2);
        let (beta, w) = v.split_at(p);
        let (out_b, out_w) = out.split_at_mut(p);
        self.ww.matvec_into(w, out_w);
        if p > 0 {
            let xb = &self.x * DVector::from_column_slice(beta);
            out_w.par_iter_mut().zip(xb.as_slice().par_iter()).for_each(|(o, v)| *o += s * v);
            let bb = &self.bb * DVector::from_column_slice(beta) + self.xt_times(w) * s;
            out_b.copy_from_slice(bb.as_slice());
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut diag: Vec<f64> = self.bb.diagonal().iter().copied().collect();
        diag.extend((0..self.n).map(|i| self.ww.get(i, i)));
        diag
    }
}

fn check_common(x: &DMatrix<f64>, factor: &NNGPFactor, delta2: f64, prior: &BetaPrior) -> Result<()> {
    if factor.target() != FactorTarget::Latent {
        return invalid("the latent system needs a latent-target factor");
    }
    if !(delta2 > 0.0 && delta2.is_finite()) {
        return invalid(format!("delta2 must be positive, got {delta2}"));
    }
    let (n, p) = x.shape();
    if n != factor.len() {
        return Err(Error::DimensionMismatch(format!("X has {n} rows, factor {}", factor.len())));
    }
    prior.check_dim(p, n)
}

/// Assembles `X*ᵀX*` for the latent model.
pub fn assemble_normal_equations(x: &DMatrix<f64>, factor: &NNGPFactor, delta2: f64, prior: &BetaPrior) -> Result<SparseSym> {
    check_common(x, factor, delta2, prior)?;
    let s = 1.0 / delta2;
    let mut bb = x.transpose() * x * s;
    if let Some(prec) = prior.precision() {
        bb += prec;
    }
    let ww = precision_csr(factor, s);
    SparseSym::from_blocks(bb, x.clone(), s, ww, prior.is_flat())
}

/// `X*ᵀ y* = [ Xᵀy/δ² + V_β⁻¹ μ_β ; y/δ² ]`.
pub fn assemble_rhs(x: &DMatrix<f64>, y: &[f64], factor: &NNGPFactor, delta2: f64, prior: &BetaPrior) -> Result<Vec<f64>> {
    check_common(x, factor, delta2, prior)?;
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!("y has length {}, X has {} rows", y.len(), x.nrows())));
    }
    let s = 1.0 / delta2;
    let p = x.ncols();
    let mut top = DVector::from_iterator(p, (0..p).map(|j| dot(x.column(j).as_slice(), y) * s));
    if let Some(pm) = prior.precision_mean() {
        top += pm;
    }
    let mut out = top.as_slice().to_vec();
    out.extend(y.iter().map(|v| v * s));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::KernelSpec;
    use crate::geometry::{build_training_neighbors, order_locations, LocationSet, OrderingStrategy};
    use crate::nngp_factor::build_factor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, m: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>, NNGPFactor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        let locs = order_locations(&LocationSet::new(raw).unwrap(), OrderingStrategy::Coordinate);
        let g = build_training_neighbors(&locs, m).unwrap();
        let f = build_factor(&locs, &g, &KernelSpec::exponential(8.0).unwrap(), FactorTarget::Latent).unwrap();
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 2.0 - 1.0 });
        let y = (0..n).map(|_| rng.random::<f64>()).collect();
        (x, y, f)
    }

    /// Explicitly stacked augmented design of the latent model.
    fn stacked(x: &DMatrix<f64>, f: &NNGPFactor, delta2: f64, prior: &BetaPrior) -> DMatrix<f64> {
        let (n, p) = x.shape();
        let lrows = if prior.is_flat() { 0 } else { p };
        let mut xs = DMatrix::zeros(2 * n + lrows, n + p);
        let sd = delta2.sqrt();
        xs.view_mut((0, 0), (n, p)).copy_from(&(x / sd));
        for i in 0..n {
            xs[(i, p + i)] = 1.0 / sd;
        }
        if let Some(linv) = prior.l_inv() {
            xs.view_mut((n, 0), (p, p)).copy_from(linv);
        }
        for i in 0..n {
            let r = n + lrows + i;
            let sdi = f.d()[i].sqrt();
            xs[(r, p + i)] = 1.0 / sdi;
            let (cols, vals) = f.a().row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                xs[(r, p + j)] -= v / sdi;
            }
        }
        xs
    }

    #[test]
    fn scalar_case() {
        let locs = LocationSet::new(vec![[0.0, 0.0]]).unwrap();
        let g = build_training_neighbors(&locs, 1).unwrap();
        let f = build_factor(&locs, &g, &KernelSpec::exponential(1.0).unwrap(), FactorTarget::Latent).unwrap();
        let x = DMatrix::zeros(1, 0);
        let sys = assemble_normal_equations(&x, &f, 0.5, &BetaPrior::flat(2.0, 1.0)).unwrap();
        assert_eq!(sys.to_dense()[(0, 0)], 1.0 / 0.5 + 1.0);
    }

    #[test]
    fn intercept_only_flat_prior() {
        let (x, _, f) = setup(40, 5, 1);
        let ones = x.columns(0, 1).into_owned();
        let sys = assemble_normal_equations(&ones, &f, 0.25, &BetaPrior::flat(2.0, 1.0)).unwrap();
        assert!((sys.bb()[(0, 0)] - 40.0 / 0.25).abs() < 1e-12);
        let dense = sys.to_dense();
        for i in 0..40 {
            assert_eq!(dense[(0, 1 + i)], 4.0);
            assert_eq!(dense[(1 + i, 0)], 4.0);
        }
    }

    #[test]
    fn matches_dense_stacking() {
        let (x, y, f) = setup(150, 10, 2);
        for prior in [
            BetaPrior::flat(2.0, 1.0),
            BetaPrior::normal(DVector::from_vec(vec![0.5, -1.0]), DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]), 2.0, 1.0).unwrap(),
        ] {
            let delta2 = 0.3;
            let sys = assemble_normal_equations(&x, &f, delta2, &prior).unwrap();
            let xs = stacked(&x, &f, delta2, &prior);
            let oracle = xs.transpose() * &xs;
            let err = (sys.to_dense() - &oracle).amax();
            assert!(err < 1e-12 * oracle.amax().max(1.0), "block error {err}");
            assert!(sys.ww().nnz() <= 150 * 11 * 11);

            let mut ys = DVector::zeros(xs.nrows());
            for i in 0..150 {
                ys[i] = y[i] / delta2.sqrt();
            }
            if let (Some(linv), Some(mean)) = (prior.l_inv(), prior.mean()) {
                ys.rows_mut(150, 2).copy_from(&(linv * mean));
            }
            let rhs_oracle = xs.transpose() * ys;
            let rhs = assemble_rhs(&x, &y, &f, delta2, &prior).unwrap();
            for (a, b) in rhs.iter().zip(rhs_oracle.iter()) {
                assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
            }

            let v: Vec<f64> = (0..152).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
            let mut out = vec![0.0; 152];
            sys.apply(&v, &mut out);
            let dense = oracle * DVector::from_column_slice(&v);
            for (a, b) in out.iter().zip(dense.iter()) {
                assert!((a - b).abs() < 1e-12 * b.abs().max(1.0) * 10.0);
            }
        }
    }

    #[test]
    fn rhs_trivial_cases() {
        let (x, _, f) = setup(20, 3, 3);
        let rhs = assemble_rhs(&x, &[0.0; 20], &f, 0.2, &BetaPrior::flat(2.0, 1.0)).unwrap();
        assert!(rhs.iter().all(|&v| v == 0.0));
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let rhs = assemble_rhs(&DMatrix::zeros(20, 0), &y, &f, 0.5, &BetaPrior::flat(2.0, 1.0)).unwrap();
        assert_eq!(rhs, y.iter().map(|v| v / 0.5).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, y, f) = setup(20, 3, 4);
        let flat = BetaPrior::flat(2.0, 1.0);
        assert!(assemble_normal_equations(&x, &f, 0.0, &flat).is_err());
        assert!(assemble_normal_equations(&x.rows(0, 10).into_owned(), &f, 0.1, &flat).is_err());
        assert!(assemble_rhs(&x, &y[..5], &f, 0.1, &flat).is_err());
        assert!(assemble_normal_equations(&DMatrix::from_element(20, 20, 1.0), &f, 0.1, &flat).is_err());
    }
}
