use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use super::config::{FileConfig, Resolved};
use super::{Cli, Command, Timer};
use crate::conjugate_models::{fit_latent, sample_latent, BetaPrior, PosteriorDraws};
use crate::covariance::{default_grid, KernelFamily, KernelSpec};
use crate::evaluation::{
    central_interval, collapsed_truth, coverage, empirical_kl_scaled, mse_w, rmspe, simulate_gp, simulate_nngp,
    CollapsedModel, KlDraw, SimParams, SimTruth, DENSE_CAP,
};
use crate::geometry::{
    build_prediction_neighbors, build_training_neighbors, order_locations, LocationSet, OrderingStrategy,
};
use crate::io::{
    read_bundle, read_data, read_draws_csv, write_bundle, write_draws_csv, write_provenance, DataSet, FactorCache,
    FactorKey, FitMeta, PosteriorBundle, BUNDLE_MAGIC,
};
use crate::model_selection::{make_folds, CrossValidator, CvModel, CvProblem, DEFAULT_FOLDS};
use crate::nngp_factor::{build_factor, build_prediction_factor, FactorTarget, NNGPFactor};
use crate::prediction::{predict_mean_from, sample_predictive_from, SITE_BLOCK};
use crate::rng::{domain, substream};
use crate::sparse_solver::CgConfig;

const DEFAULT_M: usize = 10;
const DEFAULT_SEED: u64 = 1;
const DEFAULT_DRAWS: usize = 300;
const DEFAULT_A_SIGMA: f64 = 2.0;
const DEFAULT_CG_TOL: f64 = 1e-8;

pub(super) fn dispatch(cli: &Cli, timer: &mut Timer) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => FileConfig::default(),
    };
    if let Some(f) = &file.kernel.family {
        f.parse::<KernelFamily>()?;
    }
    match &cli.command {
        Command::Simulate { .. } => simulate(cli, &file, timer),
        Command::Cv { .. } => cv(cli, &file, timer),
        Command::Fit { .. } => fit(cli, &file, timer),
        Command::Predict { .. } => predict(cli, timer),
        Command::Evaluate { .. } => evaluate(cli, timer),
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().take(8).map(|b| format!("{b:02x}")).collect())
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(f))
}

fn load_data(path: &Path, coords: &super::CoordArgs) -> Result<DataSet> {
    read_data(path, coords.mode()).with_context(|| format!("reading data {}", path.display()))
}

/// Training rows in model order.
struct Training {
    locs: LocationSet,
    x: DMatrix<f64>,
    y: Vec<f64>,
    covariate_names: Vec<String>,
}

fn training(data: &DataSet) -> Result<Training> {
    let rows = data.rows_where_holdout(false);
    if rows.is_empty() {
        bail!("no training rows (every row is flagged holdout = 1)");
    }
    let train = data.subset(&rows)?;
    let y = train.response.clone().ok_or_else(|| anyhow!("data file has no 'response' column"))?;
    let locs = order_locations(&train.locs, OrderingStrategy::Coordinate);
    let x_all = train.design();
    let perm = locs.id_map();
    let x = DMatrix::from_fn(perm.len(), x_all.ncols(), |i, j| x_all[(perm[i], j)]);
    let y = perm.iter().map(|&i| y[i]).collect();
    Ok(Training { locs, x, y, covariate_names: train.covariate_names })
}

fn sample_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
}

fn prior_for(a: Option<f64>, b: Option<f64>, file: &FileConfig, y: &[f64]) -> Result<BetaPrior> {
    let a = a.or(file.run.a_sigma).unwrap_or(DEFAULT_A_SIGMA);
    let b = match b.or(file.run.b_sigma) {
        Some(b) => b,
        None => {
            let v = sample_variance(y);
            if !(v > 0.0) {
                bail!("response has zero variance; pass --b-sigma");
            }
            v
        }
    };
    Ok(BetaPrior::try_flat(a, b)?)
}

fn factor_with_cache(
    cache: Option<&FactorCache>,
    locs: &LocationSet,
    m: usize,
    kernel: &KernelSpec,
    target: FactorTarget,
) -> Result<NNGPFactor> {
    let build = || {
        let graph = build_training_neighbors(locs, m)?;
        build_factor(locs, &graph, kernel, target)
    };
    Ok(match cache {
        Some(c) => c.get_or_build(&FactorKey::new(locs, m, OrderingStrategy::Coordinate, kernel, target), build)?,
        None => build()?,
    })
}

fn simulate(cli: &Cli, file: &FileConfig, timer: &mut Timer) -> Result<()> {
    let Command::Simulate { n, seed, beta0, beta1, sigma2, tau2, phi, holdout, simulator, sim_m, out } = &cli.command else {
        unreachable!()
    };
    let base = SimParams::default();
    let params = SimParams {
        beta: [beta0.unwrap_or(base.beta[0]), beta1.unwrap_or(base.beta[1])],
        sigma2: sigma2.unwrap_or(base.sigma2),
        tau2: tau2.or(file.noise.delta2.zip(*sigma2).map(|(d, s)| d * s)).unwrap_or(base.tau2),
        phi: phi.or(file.kernel.phi).unwrap_or(base.phi),
    };
    let seed = seed.or(file.run.seed).unwrap_or(DEFAULT_SEED);
    let n_hold = holdout.unwrap_or(n / 6);
    if n_hold >= *n {
        bail!("--holdout {n_hold} leaves no training rows out of {n}");
    }
    let dense = match simulator.as_str() {
        "dense" => true,
        "nngp" => false,
        _ => *n <= DENSE_CAP,
    };
    let mut resolved = Resolved::new("simulate");
    resolved
        .set("n", *n as i64)
        .set("seed", seed as i64)
        .set("beta0", params.beta[0])
        .set("beta1", params.beta[1])
        .set("sigma2", params.sigma2)
        .set("tau2", params.tau2)
        .set("phi", params.phi)
        .set("holdout", n_hold as i64)
        .set("simulator", if dense { "dense" } else { "nngp" });
    if !dense {
        resolved.set("sim_m", *sim_m as i64);
    }
    let truth: SimTruth = if dense { simulate_gp(*n, &params, seed)? } else { simulate_nngp(*n, &params, *sim_m, seed)? };
    timer.lap("simulate");

    let mut order: Vec<usize> = (0..*n).collect();
    order.shuffle(&mut substream(seed, domain::SIMULATE, 2));
    let mut is_hold = vec![false; *n];
    for &i in &order[..n_hold] {
        is_hold[i] = true;
    }

    let mut w = create(out)?;
    write_provenance(&mut w, "simulate", &resolved.hash())?;
    writeln!(
        w,
        "# truth beta0={} beta1={} sigma2={} tau2={} phi={} seed={} simulator={}",
        params.beta[0],
        params.beta[1],
        params.sigma2,
        params.tau2,
        params.phi,
        seed,
        if dense { "dense" } else { "nngp" }
    )?;
    writeln!(w, "x,y,x1,response,w_true,holdout")?;
    for i in 0..*n {
        let [cx, cy] = truth.locs.coord(i);
        writeln!(w, "{cx},{cy},{},{},{},{}", truth.x[(i, 1)], truth.y[i], truth.w[i], u8::from(is_hold[i]))?;
    }
    w.flush()?;
    resolved.write_beside(out)?;
    Ok(())
}

fn cv(cli: &Cli, file: &FileConfig, timer: &mut Timer) -> Result<()> {
    let Command::Cv {
        data,
        m,
        k,
        grid_default,
        grid_file,
        grid_levels,
        refine,
        shrink,
        model,
        seed,
        a_sigma,
        b_sigma,
        cg_tol,
        factor_cache,
        coords,
        out,
    } = &cli.command
    else {
        unreachable!()
    };
    let ds = load_data(data, coords)?;
    let tr = training(&ds)?;
    let m = m.or(file.run.m).unwrap_or(DEFAULT_M);
    let k = k.or(file.run.folds).unwrap_or(DEFAULT_FOLDS);
    let seed = seed.or(file.run.seed).unwrap_or(DEFAULT_SEED);
    let refine = refine.or(file.run.refine).unwrap_or(0);
    let model: CvModel = model.clone().or(file.run.model.clone()).unwrap_or_else(|| "latent".into()).parse()?;
    let tol = cg_tol.or(file.run.cg_tol).unwrap_or(DEFAULT_CG_TOL);
    let prior = prior_for(*a_sigma, *b_sigma, file, &tr.y)?;
    let grid = if let Some(path) = grid_file {
        FileConfig::load(path)?.grid()?.ok_or_else(|| anyhow!("{} has no [grid] section", path.display()))?
    } else if *grid_default {
        default_grid(&tr.locs, *grid_levels, *grid_levels)?
    } else {
        match file.grid()? {
            Some(g) => g,
            None => default_grid(&tr.locs, *grid_levels, *grid_levels)?,
        }
    };

    let mut resolved = Resolved::new("cv");
    resolved
        .set("data", file_digest(data)?)
        .set("m", m as i64)
        .set("folds", k as i64)
        .set("seed", seed as i64)
        .set("refine", refine as i64)
        .set("shrink", *shrink)
        .set("model", model.to_string())
        .set("cg_tol", tol)
        .set("a_sigma", prior.a_sigma())
        .set("b_sigma", prior.b_sigma())
        .set("grid_phi", grid.phis().to_vec())
        .set("grid_delta2", grid.delta2s().to_vec());

    let plan = make_folds(tr.y.len(), k, seed)?;
    let cache = factor_cache.as_ref().map(FactorCache::new).transpose()?;
    let problem = CvProblem {
        x: &tr.x,
        y: &tr.y,
        locs: &tr.locs,
        m,
        prior: &prior,
        cfg: CgConfig::with_tol(tol),
        model,
        cache: cache.as_ref(),
    };
    let cv = CrossValidator::new(problem, &plan)?;
    timer.lap("cv-neighbors");
    let report = cv.run(&grid, refine, *shrink)?;
    timer.lap("cv-grid");
    let c = report.counters;
    log::info!("cv counters: neighbor builds {}, factor builds {}, fits {}", c.neighbor_builds, c.factor_builds, c.fits);
    for r in report.failed() {
        eprintln!("warning: cell phi = {}, delta2 = {} failed: {}", r.phi, r.delta2, r.failure.as_deref().unwrap_or(""));
    }

    let mut w = create(out)?;
    write_provenance(&mut w, "cv", &resolved.hash())?;
    writeln!(w, "stage,phi,delta2,rmspe,cg_iters,cg_residual,status")?;
    for r in &report.rows {
        let rm = r.rmspe.map(|v| v.to_string()).unwrap_or_default();
        let status = if r.rmspe.is_some() { "ok" } else { "failed" };
        writeln!(w, "{},{},{},{rm},{},{},{status}", r.stage, r.phi, r.delta2, r.cg_iters, r.cg_residual)?;
    }
    w.flush()?;
    resolved.write_beside(out)?;
    let best = report.best().ok_or_else(|| anyhow!("every grid cell failed"))?;
    println!("{} {}", best.phi, best.delta2);
    Ok(())
}

fn summarize(values: &[f64]) -> (f64, f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let (lo, hi) = central_interval(values, 0.95);
    (mean, lo, hi)
}

fn fit(cli: &Cli, file: &FileConfig, timer: &mut Timer) -> Result<()> {
    let Command::Fit {
        data,
        m,
        phi,
        delta2,
        a_sigma,
        b_sigma,
        draws,
        seed,
        cg_tol,
        draws_out,
        summary_out,
        factor_cache,
        coords,
    } = &cli.command
    else {
        unreachable!()
    };
    let ds = load_data(data, coords)?;
    let tr = training(&ds)?;
    let m = m.or(file.run.m).unwrap_or(DEFAULT_M);
    let phi = phi.or(file.kernel.phi).ok_or_else(|| anyhow!("--phi is required (or kernel.phi in the config)"))?;
    let delta2 = delta2.or(file.noise.delta2).ok_or_else(|| anyhow!("--delta2 is required (or noise.delta2 in the config)"))?;
    let big_l = draws.or(file.run.draws).unwrap_or(DEFAULT_DRAWS);
    let seed = seed.or(file.run.seed).unwrap_or(DEFAULT_SEED);
    let tol = cg_tol.or(file.run.cg_tol).unwrap_or(DEFAULT_CG_TOL);
    let prior = prior_for(*a_sigma, *b_sigma, file, &tr.y)?;
    let mut resolved = Resolved::new("fit");
    resolved
        .set("data", file_digest(data)?)
        .set("m", m as i64)
        .set("phi", phi)
        .set("delta2", delta2)
        .set("a_sigma", prior.a_sigma())
        .set("b_sigma", prior.b_sigma())
        .set("draws", big_l as i64)
        .set("seed", seed as i64)
        .set("cg_tol", tol);
    let hash = resolved.hash();

    let kernel = KernelSpec::exponential(phi)?;
    let cache = factor_cache.as_ref().map(FactorCache::new).transpose()?;
    let factor = factor_with_cache(cache.as_ref(), &tr.locs, m, &kernel, FactorTarget::Latent)?;
    timer.lap("factor");
    let cfg = CgConfig::with_tol(tol);
    let post = fit_latent(&tr.x, &tr.y, &factor, delta2, &prior, &cfg)?;
    timer.lap("fit");
    let samples = sample_latent(&post, big_l, seed, &cfg)?;
    timer.lap("draws");

    let (n, p) = (post.n(), post.p());
    let meta = FitMeta { n, p, m, phi, delta2, a_star: post.a_star(), b_star: post.b_star(), seed };
    if draws_out.extension().is_some_and(|e| e == "bin") {
        let bundle = PosteriorBundle {
            meta: meta.clone(),
            covariate_names: tr.covariate_names.clone(),
            coords: tr.locs.coords().to_vec(),
            id_map: tr.locs.id_map().to_vec(),
            gamma_hat: post.gamma_hat().to_vec(),
            draws: samples.clone(),
        };
        write_bundle(draws_out, &bundle)?;
    } else {
        write_draws_csv(draws_out, &hash, &meta, &samples, tr.locs.id_map())?;
    }
    resolved.write_beside(draws_out)?;

    if let Some(path) = summary_out {
        let mut s = String::new();
        writeln!(s, "n = {n}, p = {p}, m = {m}, phi = {phi}, delta2 = {delta2}")?;
        writeln!(s, "a_star = {}, b_star = {}", post.a_star(), post.b_star())?;
        let d = post.diagnostics();
        writeln!(s, "fit cg: iterations = {}, relative residual = {:e}", d.iters, d.rel_residual)?;
        let iters: Vec<usize> = samples.diagnostics().iter().map(|d| d.iters).collect();
        let worst = samples.diagnostics().iter().map(|d| d.rel_residual).fold(0.0, f64::max);
        writeln!(
            s,
            "draws: L = {big_l}, seed = {seed}, cg iterations min/max = {}/{}, worst relative residual = {worst:e}",
            iters.iter().min().unwrap_or(&0),
            iters.iter().max().unwrap_or(&0)
        )?;
        writeln!(s, "beta_hat = {:?}", post.beta_hat())?;
        writeln!(s, "w_hat[..5] = {:?}", &post.w_hat()[..n.min(5)])?;
        writeln!(s, "parameter,mean,q2.5,q97.5")?;
        if !samples.is_empty() {
            for j in 0..p {
                let (mu, lo, hi) = summarize(&samples.gamma_component(j));
                writeln!(s, "beta_{j},{mu},{lo},{hi}")?;
            }
            for (name, v) in [("sigma2", samples.sigma2()), ("tau2", samples.tau2())] {
                let (mu, lo, hi) = summarize(v);
                writeln!(s, "{name},{mu},{lo},{hi}")?;
            }
        }
        let mut w = create(path)?;
        write_provenance(&mut w, "fit", &hash)?;
        w.write_all(s.as_bytes())?;
        w.flush()?;
    }
    Ok(())
}

fn is_bundle(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut head = [0u8; 8];
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(f.read_exact(&mut head).is_ok() && head == BUNDLE_MAGIC)
}

fn predict(cli: &Cli, timer: &mut Timer) -> Result<()> {
    let Command::Predict { posterior, sites, m, seed, coords, out } = &cli.command else { unreachable!() };
    let bundle = read_bundle(posterior).with_context(|| format!("reading posterior bundle {}", posterior.display()))?;
    let meta = &bundle.meta;
    let m = m.unwrap_or(meta.m);
    let seed = seed.unwrap_or(meta.seed);
    let ds = load_data(sites, coords)?;
    if ds.covariate_names != bundle.covariate_names {
        bail!("site covariates {:?} differ from the fitted covariates {:?}", ds.covariate_names, bundle.covariate_names);
    }
    let rows = if ds.holdout.is_some() { ds.rows_where_holdout(true) } else { (0..ds.len()).collect() };
    let sites_ds = ds.subset(&rows)?;
    let mut resolved = Resolved::new("predict");
    resolved
        .set("posterior", file_digest(posterior)?)
        .set("sites", file_digest(sites)?)
        .set("m", m as i64)
        .set("seed", seed as i64);

    let train = LocationSet::new(bundle.coords.clone())?;
    let kernel = KernelSpec::exponential(meta.phi)?;
    let xu_all = sites_ds.design();
    let mut w = create(out)?;
    write_provenance(&mut w, "predict", &resolved.hash())?;
    writeln!(w, "x,y,mean_w,mean_y,sd_y,lo95,hi95")?;
    let total = sites_ds.len();
    let mut start = 0;
    while start < total {
        let end = (start + SITE_BLOCK).min(total);
        let idx: Vec<usize> = (start..end).collect();
        let block = sites_ds.locs.select(&idx);
        let graph = build_prediction_neighbors(&train, &block, m)?;
        let pf = build_prediction_factor(&train, &block, &graph, &kernel, FactorTarget::Latent)?;
        let xu = xu_all.rows(start, end - start).into_owned();
        let (mean_w, mean_y) = predict_mean_from(bundle.beta_hat(), bundle.w_hat(), meta.phi, &xu, &pf)?;
        let pd = sample_predictive_from(&bundle.draws, &xu, &pf, meta.delta2, seed, start as u64)?;
        for i in 0..block.len() {
            let ys = pd.y(i);
            let (sd, lo, hi) = if ys.len() > 1 {
                let mu = ys.iter().sum::<f64>() / ys.len() as f64;
                let var = ys.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (ys.len() - 1) as f64;
                let (lo, hi) = central_interval(ys, 0.95);
                (var.sqrt(), lo, hi)
            } else {
                (0.0, ys[0], ys[0])
            };
            let [cx, cy] = block.coord(i);
            writeln!(w, "{cx},{cy},{},{},{sd},{lo},{hi}", mean_w[i], mean_y[i])?;
        }
        start = end;
    }
    w.flush()?;
    resolved.write_beside(out)?;
    timer.lap("predict");
    Ok(())
}

fn meta_f64(ds: &DataSet, key: &str) -> Result<f64> {
    ds.meta_value(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| anyhow!("truth file lacks '{key}=' in its '# truth' header"))
}

/// Reads draws with `w` in training input-row order.
fn load_draws(path: &Path) -> Result<(FitMeta, PosteriorDraws)> {
    if is_bundle(path)? {
        let b = read_bundle(path)?;
        let n = b.meta.n;
        let mut w = Vec::with_capacity(b.draws.len() * n);
        let mut row = vec![0.0; n];
        for l in 0..b.draws.len() {
            for (k, &raw) in b.id_map.iter().enumerate() {
                row[raw] = b.draws.w(l)[k];
            }
            w.extend_from_slice(&row);
        }
        let beta = (0..b.draws.len()).flat_map(|l| b.draws.beta(l).to_vec()).collect();
        let d = PosteriorDraws::from_parts(n, b.meta.p, b.meta.delta2, b.meta.seed, b.draws.sigma2().to_vec(), beta, w)?;
        Ok((b.meta, d))
    } else {
        Ok(read_draws_csv(path)?)
    }
}

fn evaluate(cli: &Cli, timer: &mut Timer) -> Result<()> {
    let Command::Evaluate { truth, draws, pred, timing, out } = &cli.command else { unreachable!() };
    let ds = read_data(truth, crate::io::CoordinateMode::Planar).with_context(|| format!("reading truth {}", truth.display()))?;
    let beta_true = [meta_f64(&ds, "beta0")?, meta_f64(&ds, "beta1")?];
    let (sigma2, tau2, phi_true) = (meta_f64(&ds, "sigma2")?, meta_f64(&ds, "tau2")?, meta_f64(&ds, "phi")?);
    let (meta, d) = load_draws(draws)?;
    let train = ds.subset(&ds.rows_where_holdout(false))?;
    let test = ds.subset(&ds.rows_where_holdout(true))?;
    if train.len() != meta.n {
        bail!("draws describe {} training rows, truth has {}", meta.n, train.len());
    }
    let w_true = train.w_true.clone().ok_or_else(|| anyhow!("truth file has no 'w_true' column"))?;
    let mut resolved = Resolved::new("evaluate");
    resolved.set("truth", file_digest(truth)?).set("draws", file_digest(draws)?).set("pred", file_digest(pred)?);

    // parameters
    let mut rows: Vec<(String, String, String)> = Vec::new();
    let fmt3 = |(m, lo, hi): (f64, f64, f64)| format!("{m:.4} ({lo:.4}, {hi:.4})");
    for (j, b) in beta_true.iter().enumerate().take(meta.p) {
        rows.push((format!("beta_{j}"), b.to_string(), fmt3(summarize(&d.gamma_component(j)))));
    }
    rows.push(("sigma2".into(), sigma2.to_string(), fmt3(summarize(d.sigma2()))));
    rows.push(("tau2".into(), tau2.to_string(), fmt3(summarize(d.tau2()))));
    rows.push(("phi".into(), phi_true.to_string(), format!("{:.4}", meta.phi)));

    // collapsed-space KL over the draws, model M̃ from the fitted factor
    let x = train.design();
    let truth_g = collapsed_truth(&train.locs, &x, &beta_true[..meta.p], sigma2, tau2, phi_true)?;
    let ordered = order_locations(&train.locs, OrderingStrategy::Coordinate);
    let graph = build_training_neighbors(&ordered, meta.m)?;
    let factor = build_factor(&ordered, &graph, &KernelSpec::exponential(meta.phi)?, FactorTarget::Latent)?;
    let m_ord = factor.covariance_dense();
    let perm = ordered.id_map();
    let mut inv = vec![0; perm.len()];
    for (k, &raw) in perm.iter().enumerate() {
        inv[raw] = k;
    }
    let m_tilde = DMatrix::from_fn(perm.len(), perm.len(), |i, j| m_ord[(inv[i], inv[j])]);
    let kl = empirical_kl_scaled(&KlDraw::from_draws(&d), meta.delta2, &CollapsedModel { x, m_tilde }, &truth_g)?;
    rows.push(("KL-D".into(), "--".into(), fmt3((kl.mean, kl.lo95, kl.hi95))));
    timer.lap("kl");

    // latent field
    let n = meta.n;
    let mut w_mean = vec![0.0; n];
    for l in 0..d.len() {
        for (acc, v) in w_mean.iter_mut().zip(d.w(l)) {
            *acc += v / d.len() as f64;
        }
    }
    let per_draw: Vec<f64> = (0..d.len()).map(|l| mse_w(&w_true, d.w(l))).collect::<crate::Result<_>>()?;
    let (lo, hi) = central_interval(&per_draw, 0.95);
    rows.push(("MSE(w)".into(), "--".into(), format!("{:.2} ({lo:.2}, {hi:.2})", mse_w(&w_true, &w_mean)?)));
    let (wlo, whi): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|i| central_interval(&(0..d.len()).map(|l| d.w(l)[i]).collect::<Vec<_>>(), 0.95))
        .unzip();
    let cov_w = coverage(&wlo, &whi, &w_true)?;
    rows.push(("w coverage".into(), "--".into(), format!("{:.4} ({} of {n})", cov_w, (cov_w * n as f64).round())));

    // held-out predictions
    let pr = read_prediction(pred)?;
    let y_test = test.response.clone().ok_or_else(|| anyhow!("truth file has no 'response' column"))?;
    if pr.mean_y.len() != y_test.len() {
        bail!("prediction file has {} rows, truth has {} held-out rows", pr.mean_y.len(), y_test.len());
    }
    rows.push(("RMSPE".into(), "--".into(), format!("{:.4}", rmspe(&y_test, &pr.mean_y)?)));
    rows.push(("y coverage".into(), "--".into(), format!("{:.4}", coverage(&pr.lo, &pr.hi, &y_test)?)));
    if let Some(t) = timing {
        rows.push(("time(s)".into(), "--".into(), read_timing(t)?));
    }

    let mut text = String::new();
    writeln!(text, "# MSE(w): sum over training locations of squared error; point value at the posterior mean of w, interval from per-draw sums.")?;
    writeln!(text, "# KL-D: collapsed space (w integrated out), KL(truth || fitted) per draw; mean and 2.5/97.5 percentiles.")?;
    writeln!(text, "# intervals are empirical 2.5/97.5 percentiles of {} posterior draws.", d.len())?;
    writeln!(text, "{:<12} {:>10}  {}", "", "true", "conjugate latent NNGP")?;
    for (name, t, e) in &rows {
        writeln!(text, "{name:<12} {t:>10}  {e}")?;
    }
    let mut w = create(out)?;
    write_provenance(&mut w, "evaluate", &resolved.hash())?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    resolved.write_beside(out)?;
    print!("{text}");
    Ok(())
}

struct PredictionFile {
    mean_y: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

fn read_prediction(path: &Path) -> Result<PredictionFile> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading predictions {}", path.display()))?;
    let header = r.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| anyhow!("prediction file lacks '{name}'"));
    let (cm, cl, ch) = (col("mean_y")?, col("lo95")?, col("hi95")?);
    let mut p = PredictionFile { mean_y: Vec::new(), lo: Vec::new(), hi: Vec::new() };
    for rec in r.records() {
        let rec = rec?;
        let get = |c: usize| -> Result<f64> { rec.get(c).unwrap_or("").parse().map_err(|_| anyhow!("bad number in predictions")) };
        p.mean_y.push(get(cm)?);
        p.lo.push(get(cl)?);
        p.hi.push(get(ch)?);
    }
    Ok(p)
}

/// `fit + draws` seconds from a timing file, e.g. `12.0 + 0.6`.
fn read_timing(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading timing {}", path.display()))?;
    let mut fit = 0.0;
    let mut draws = 0.0;
    for line in text.lines() {
        if let Some((phase, secs)) = line.split_once(',') {
            let s: f64 = secs.trim().parse().unwrap_or(0.0);
            match phase {
                "factor" | "fit" => fit += s,
                "draws" => draws += s,
                _ => {}
            }
        }
    }
    Ok(format!("{fit:.2} + {draws:.2}"))
}
