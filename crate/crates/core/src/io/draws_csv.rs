use std::io::Write;
use std::path::Path;

use super::{comment_lines, parse_key_values, write_provenance};
use crate::conjugate_models::PosteriorDraws;
use crate::error::{Error, Result};

/// Scalars describing a latent fit, carried by both draw formats.
#[derive(Clone, Debug, PartialEq)]
pub struct FitMeta {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub phi: f64,
    pub delta2: f64,
    pub a_star: f64,
    pub b_star: f64,
    pub seed: u64,
}

impl FitMeta {
    fn to_line(&self) -> String {
        format!(
            "# fit n={} p={} m={} phi={} delta2={} a_star={} b_star={} seed={}",
            self.n, self.p, self.m, self.phi, self.delta2, self.a_star, self.b_star, self.seed
        )
    }

    fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        fn get<T: std::str::FromStr>(pairs: &[(String, String)], key: &str) -> Result<T> {
            pairs
                .iter()
                .find(|(k, _)| k == key)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("draws file lacks a valid '{key}' in its fit header")))
        }
        Ok(Self {
            n: get(pairs, "n")?,
            p: get(pairs, "p")?,
            m: get(pairs, "m")?,
            phi: get(pairs, "phi")?,
            delta2: get(pairs, "delta2")?,
            a_star: get(pairs, "a_star")?,
            b_star: get(pairs, "b_star")?,
            seed: get(pairs, "seed")?,
        })
    }
}

/// Writes `draw,sigma2,tau2,beta_0..,w_1..w_n` with `w` permuted to input
/// row order through `id_map` (ordered position → input row).
pub fn write_draws_csv(
    path: &Path,
    config_hash: &str,
    meta: &FitMeta,
    draws: &PosteriorDraws,
    id_map: &[usize],
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_provenance(&mut out, "fit", config_hash)?;
    writeln!(out, "{}", meta.to_line())?;
    let mut header = vec!["draw".to_string(), "sigma2".into(), "tau2".into()];
    header.extend((0..draws.p()).map(|j| format!("beta_{j}")));
    header.extend((1..=draws.n()).map(|i| format!("w_{i}")));
    writeln!(out, "{}", header.join(","))?;
    let mut row_w = vec![0.0; draws.n()];
    for l in 0..draws.len() {
        for (k, &raw) in id_map.iter().enumerate() {
            row_w[raw] = draws.w(l)[k];
        }
        write!(out, "{},{},{}", l + 1, draws.sigma2()[l], draws.tau2()[l])?;
        for v in draws.beta(l).iter().chain(&row_w) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a draws CSV; `w` stays in input row order.
pub fn read_draws_csv(path: &Path) -> Result<(FitMeta, PosteriorDraws)> {
    let pairs: Vec<(String, String)> = comment_lines(path)?
        .iter()
        .filter(|l| l.starts_with("# fit "))
        .flat_map(|l| parse_key_values(l))
        .collect();
    let meta = FitMeta::from_pairs(&pairs)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Format(e.to_string()))?;
    let width = 3 + meta.p + meta.n;
    let (mut sigma2, mut beta, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        if rec.len() != width {
            return Err(Error::Format(format!("draw row {row} has {} fields, expected {width}", rec.len())));
        }
        let vals: Vec<f64> = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::Format(format!("draw row {row}: bad number '{v}'"))))
            .collect::<Result<_>>()?;
        sigma2.push(vals[1]);
        beta.extend_from_slice(&vals[3..3 + meta.p]);
        w.extend_from_slice(&vals[3 + meta.p..]);
    }
    let draws = PosteriorDraws::from_parts(meta.n, meta.p, meta.delta2, meta.seed, sigma2, beta, w)?;
    Ok((meta, draws))
}
