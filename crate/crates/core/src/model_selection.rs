//! K-fold cross-validation of `(φ, δ²)` by pooled held-out RMSPE.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::conjugate_models::{fit_latent, fit_response, BetaPrior};
use crate::covariance::{refine_grid, HyperGrid, KernelSpec};
use crate::error::{invalid, Error, Result};
use crate::geometry::{build_prediction_neighbors, build_training_neighbors, LocationSet, NeighborGraph, OrderingStrategy};
use crate::io::{FactorCache, FactorKey};
use crate::nngp_factor::{build_factor, build_prediction_factor, FactorTarget, NNGPFactor, PredictionFactor};
use crate::prediction::predict_mean;
use crate::rng::{domain, substream};
use crate::sparse_solver::CgConfig;

pub const DEFAULT_FOLDS: usize = 5;

/// Random partition of `0..n` into `k` labelled folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    assignment: Vec<usize>,
    seed: u64,
}

/// Shuffles `0..n` and deals positions round-robin, so fold sizes differ by
/// at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return invalid(format!("need 2 <= K <= n, got K = {k}, n = {n}"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, domain::FOLDS, 0));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldPlan { k, assignment, seed })
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Indices in fold `k`, increasing.
    pub fn fold(&self, k: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == k).collect()
    }

    /// Indices outside fold `k`, increasing.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != k).collect()
    }
}

/// Which conjugate model scores each grid cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CvModel {
    #[default]
    Latent,
    Response,
}

impl FromStr for CvModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latent" => Ok(Self::Latent),
            "response" => Ok(Self::Response),
            other => invalid(format!("unknown model '{other}' (expected latent or response)")),
        }
    }
}

impl fmt::Display for CvModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Latent => "latent",
            Self::Response => "response",
        })
    }
}

/// One scored grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CvRow {
    pub phi: f64,
    pub delta2: f64,
    /// `None` when a fold fit failed.
    pub rmspe: Option<f64>,
    pub failure: Option<String>,
    /// CG iterations summed over folds (latent model only).
    pub cg_iters: usize,
    /// Worst final relative residual over folds (latent model only).
    pub cg_residual: f64,
    /// 0 for the initial grid, `r` for the `r`-th refinement.
    pub stage: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CvCounters {
    pub neighbor_builds: usize,
    pub factor_builds: usize,
    pub fits: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub model: CvModel,
    pub rows: Vec<CvRow>,
    /// Index into `rows` of the selected cell.
    pub best: Option<usize>,
    pub counters: CvCounters,
}

impl CvReport {
    pub fn best(&self) -> Option<&CvRow> {
        self.best.map(|b| &self.rows[b])
    }

    pub fn failed(&self) -> impl Iterator<Item = &CvRow> {
        self.rows.iter().filter(|r| r.rmspe.is_none())
    }

    fn select_best(&mut self) {
        self.best = self
            .rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.rmspe.map(|e| (i, e, r.delta2, r.phi)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.total_cmp(&b.2)).then(a.3.total_cmp(&b.3)))
            .map(|t| t.0);
    }
}

/// Data and settings shared by all grid cells.
pub struct CvProblem<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    /// Training locations in their model ordering; rows of `x`/`y` follow it.
    pub locs: &'a LocationSet,
    pub m: usize,
    pub prior: &'a BetaPrior,
    pub cfg: CgConfig,
    pub model: CvModel,
    /// Optional on-disk store of training factors.
    pub cache: Option<&'a FactorCache>,
}

struct FoldData {
    train_locs: LocationSet,
    test_locs: LocationSet,
    graph: NeighborGraph,
    pred_graph: NeighborGraph,
    x_train: DMatrix<f64>,
    y_train: Vec<f64>,
    x_test: DMatrix<f64>,
    y_test: Vec<f64>,
}

fn rows_of(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}

#[derive(Default)]
struct AtomicCounters {
    neighbor_builds: AtomicUsize,
    factor_builds: AtomicUsize,
    fits: AtomicUsize,
}

impl AtomicCounters {
    fn bump(c: &AtomicUsize, by: usize) {
        c.fetch_add(by, Ordering::Relaxed);
    }

    fn snapshot(&self) -> CvCounters {
        CvCounters {
            neighbor_builds: self.neighbor_builds.load(Ordering::Relaxed),
            factor_builds: self.factor_builds.load(Ordering::Relaxed),
            fits: self.fits.load(Ordering::Relaxed),
        }
    }
}

/// Cross-validator holding the per-fold neighbor graphs, which are built once
/// and reused for every grid cell and refinement stage.
pub struct CrossValidator<'a> {
    problem: CvProblem<'a>,
    folds: Vec<FoldData>,
    counters: AtomicCounters,
}

/// Per-fold outcome of one cell: squared error sum, CG iterations, residual.
type FoldScore = std::result::Result<(f64, usize, f64), String>;

impl<'a> CrossValidator<'a> {
    pub fn new(problem: CvProblem<'a>, plan: &FoldPlan) -> Result<Self> {
        let n = problem.locs.len();
        if problem.x.nrows() != n || problem.y.len() != n || plan.assignment().len() != n {
            return Err(Error::DimensionMismatch("x, y, locations and fold plan must share n".into()));
        }
        let counters = AtomicCounters::default();
        let folds = (0..plan.k())
            .into_par_iter()
            .map(|k| {
                let train = plan.complement(k);
                let test = plan.fold(k);
                let train_locs = problem.locs.select(&train);
                let test_locs = problem.locs.select(&test);
                if problem.m > train.len() {
                    return invalid(format!("m = {} exceeds the {} training points of fold {k}", problem.m, train.len()));
                }
                let graph = build_training_neighbors(&train_locs, problem.m)?;
                let pred_graph = build_prediction_neighbors(&train_locs, &test_locs, problem.m)?;
                AtomicCounters::bump(&counters.neighbor_builds, 2);
                Ok(FoldData {
                    x_train: rows_of(problem.x, &train),
                    y_train: train.iter().map(|&i| problem.y[i]).collect(),
                    x_test: rows_of(problem.x, &test),
                    y_test: test.iter().map(|&i| problem.y[i]).collect(),
                    train_locs,
                    test_locs,
                    graph,
                    pred_graph,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { problem, folds, counters })
    }

    pub fn counters(&self) -> CvCounters {
        self.counters.snapshot()
    }

    fn factors(&self, fold: &FoldData, kernel: &KernelSpec, target: FactorTarget) -> Result<(NNGPFactor, PredictionFactor)> {
        let build = || build_factor(&fold.train_locs, &fold.graph, kernel, target);
        let f = match self.problem.cache {
            // fold locations are already in model order
            Some(c) => c.get_or_build(&FactorKey::new(&fold.train_locs, self.problem.m, OrderingStrategy::Identity, kernel, target), build)?,
            None => build()?,
        };
        let pf = build_prediction_factor(&fold.train_locs, &fold.test_locs, &fold.pred_graph, kernel, target)?;
        AtomicCounters::bump(&self.counters.factor_builds, 2);
        Ok((f, pf))
    }

    fn sq_error(pred: &[f64], truth: &[f64]) -> f64 {
        pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum()
    }

    /// Scores every δ² for one `(φ, fold)`; the latent factors are built once.
    fn score_latent(&self, fold: &FoldData, phi: f64, delta2s: &[f64]) -> Vec<FoldScore> {
        let fail = |e: Error| vec![Err(e.to_string()); delta2s.len()];
        let kernel = match KernelSpec::exponential(phi) {
            Ok(k) => k,
            Err(e) => return fail(e),
        };
        let (f, pf) = match self.factors(fold, &kernel, FactorTarget::Latent) {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        delta2s
            .iter()
            .map(|&d2| {
                AtomicCounters::bump(&self.counters.fits, 1);
                let post = fit_latent(&fold.x_train, &fold.y_train, &f, d2, self.problem.prior, &self.problem.cfg)
                    .map_err(|e| e.to_string())?;
                let (_, mean_y) = predict_mean(&post, &fold.x_test, &pf).map_err(|e| e.to_string())?;
                let diag = post.diagnostics();
                Ok((Self::sq_error(&mean_y, &fold.y_test), diag.iters, diag.rel_residual))
            })
            .collect()
    }

    fn score_response(&self, fold: &FoldData, phi: f64, delta2: f64) -> FoldScore {
        let kernel = KernelSpec::exponential(phi).map_err(|e| e.to_string())?;
        let target = FactorTarget::Response { delta2 };
        let (f, pf) = self.factors(fold, &kernel, target).map_err(|e| e.to_string())?;
        AtomicCounters::bump(&self.counters.fits, 1);
        let post = fit_response(&fold.x_train, &fold.y_train, &f, self.problem.prior).map_err(|e| e.to_string())?;
        let pred = post.predict_mean(&fold.x_test, &pf).map_err(|e| e.to_string())?;
        Ok((Self::sq_error(&pred, &fold.y_test), 0, 0.0))
    }

    /// Scores all cells of `grid`; rows are in the grid's row-major order.
    pub fn score_grid(&self, grid: &HyperGrid, stage: usize) -> Vec<CvRow> {
        let (phis, deltas) = (grid.phis(), grid.delta2s());
        let nf = self.folds.len();
        // scores[phi][fold][delta]
        let scores: Vec<Vec<Vec<FoldScore>>> = match self.problem.model {
            CvModel::Latent => {
                let flat: Vec<Vec<FoldScore>> = (0..phis.len() * nf)
                    .into_par_iter()
                    .map(|t| self.score_latent(&self.folds[t % nf], phis[t / nf], deltas))
                    .collect();
                flat.chunks(nf).map(|c| c.to_vec()).collect()
            }
            CvModel::Response => {
                let flat: Vec<FoldScore> = (0..phis.len() * nf * deltas.len())
                    .into_par_iter()
                    .map(|t| {
                        let (pi, rest) = (t / (nf * deltas.len()), t % (nf * deltas.len()));
                        self.score_response(&self.folds[rest / deltas.len()], phis[pi], deltas[rest % deltas.len()])
                    })
                    .collect();
                flat.chunks(nf * deltas.len()).map(|c| c.chunks(deltas.len()).map(|d| d.to_vec()).collect()).collect()
            }
        };
        let n = self.problem.y.len() as f64;
        let mut rows = Vec::with_capacity(grid.len());
        for (pi, di) in grid.cells() {
            let mut row = CvRow {
                phi: phis[pi],
                delta2: deltas[di],
                rmspe: None,
                failure: None,
                cg_iters: 0,
                cg_residual: 0.0,
                stage,
            };
            let mut e = 0.0;
            let mut ok = true;
            for fold in 0..nf {
                match &scores[pi][fold][di] {
                    Ok((se, it, res)) => {
                        e += se;
                        row.cg_iters += it;
                        row.cg_residual = row.cg_residual.max(*res);
                    }
                    Err(msg) => {
                        log::warn!("cv cell phi = {}, delta2 = {} failed on fold {fold}: {msg}", row.phi, row.delta2);
                        row.failure = Some(format!("fold {fold}: {msg}"));
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                row.rmspe = Some((e / n).sqrt());
            }
            rows.push(row);
        }
        rows
    }

    /// Scores `grid`, then `refine` successively shrunk grids centered on the
    /// best cell so far. The selected cell is the best over all stages.
    pub fn run(&self, grid: &HyperGrid, refine: usize, shrink: f64) -> Result<CvReport> {
        let mut report = CvReport {
            model: self.problem.model,
            rows: self.score_grid(grid, 0),
            best: None,
            counters: CvCounters::default(),
        };
        report.select_best();
        let mut current = grid.clone();
        for stage in 1..=refine {
            let Some(best) = report.best() else { break };
            let levels = current.phis().len().max(current.delta2s().len());
            current = refine_grid(&current, (best.phi, best.delta2), shrink, levels)?;
            report.rows.extend(self.score_grid(&current, stage));
            report.select_best();
        }
        report.counters = self.counters();
        Ok(report)
    }
}

/// Cross-validates every cell of `grid` once.
#[allow(clippy::too_many_arguments)]
pub fn cv_score(
    x: &DMatrix<f64>,
    y: &[f64],
    locs: &LocationSet,
    m: usize,
    grid: &HyperGrid,
    folds: &FoldPlan,
    prior: &BetaPrior,
    cfg: &CgConfig,
    model: CvModel,
) -> Result<CvReport> {
    let problem = CvProblem { x, y, locs, m, prior, cfg: cfg.clone(), model, cache: None };
    CrossValidator::new(problem, folds)?.run(grid, 0, 1.0)
}
