//! Binary posterior bundle. All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "CNNGPPB\0"
//! version      u32
//! n, p, L, m   u64 each
//! phi, delta2, a_star, b_star   f64 each
//! seed         u64
//! q            u32, then q covariate names as (u32 byte length, UTF-8)
//! coords       n × (f64, f64), training locations in model order
//! id_map       n × u64, input row of each ordered location
//! gamma_hat    (p + n) × f64, [β̂; ŵ] with ŵ in model order
//! draws        L × (sigma2 f64, tau2 f64, beta p × f64, w n × f64)
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::draws_csv::FitMeta;
use crate::conjugate_models::PosteriorDraws;
use crate::error::{Error, Result};

pub const BUNDLE_MAGIC: [u8; 8] = *b"CNNGPPB\0";
pub const BUNDLE_VERSION: u32 = 1;

/// Everything `predict` and `evaluate` need from a latent fit.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorBundle {
    pub meta: FitMeta,
    pub covariate_names: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub id_map: Vec<usize>,
    pub gamma_hat: Vec<f64>,
    /// Draws with `w` in model order.
    pub draws: PosteriorDraws,
}

impl PosteriorBundle {
    pub fn beta_hat(&self) -> &[f64] {
        &self.gamma_hat[..self.meta.p]
    }

    pub fn w_hat(&self) -> &[f64] {
        &self.gamma_hat[self.meta.p..]
    }
}

pub fn write_bundle(path: &Path, b: &PosteriorBundle) -> Result<()> {
    let m = &b.meta;
    if b.coords.len() != m.n || b.id_map.len() != m.n || b.gamma_hat.len() != m.n + m.p {
        return Err(Error::DimensionMismatch("bundle parts disagree with n, p".into()));
    }
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(&BUNDLE_MAGIC)?;
    out.write_u32::<LE>(BUNDLE_VERSION)?;
    for v in [m.n, m.p, b.draws.len(), m.m] {
        out.write_u64::<LE>(v as u64)?;
    }
    for v in [m.phi, m.delta2, m.a_star, m.b_star] {
        out.write_f64::<LE>(v)?;
    }
    out.write_u64::<LE>(m.seed)?;
    out.write_u32::<LE>(b.covariate_names.len() as u32)?;
    for name in &b.covariate_names {
        out.write_u32::<LE>(name.len() as u32)?;
        out.write_all(name.as_bytes())?;
    }
    for c in &b.coords {
        out.write_f64::<LE>(c[0])?;
        out.write_f64::<LE>(c[1])?;
    }
    for &i in &b.id_map {
        out.write_u64::<LE>(i as u64)?;
    }
    for &v in &b.gamma_hat {
        out.write_f64::<LE>(v)?;
    }
    for l in 0..b.draws.len() {
        out.write_f64::<LE>(b.draws.sigma2()[l])?;
        out.write_f64::<LE>(b.draws.tau2()[l])?;
        for &v in b.draws.beta(l).iter().chain(b.draws.w(l)) {
            out.write_f64::<LE>(v)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, k: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; k];
    r.read_f64_into::<LE>(&mut v)?;
    Ok(v)
}

pub fn read_bundle(path: &Path) -> Result<PosteriorBundle> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != BUNDLE_MAGIC {
        return Err(Error::Format(format!("{} is not a posterior bundle", path.display())));
    }
    let version = r.read_u32::<LE>()?;
    if version != BUNDLE_VERSION {
        return Err(Error::Format(format!("unsupported bundle version {version}")));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = usize::try_from(r.read_u64::<LE>()?).map_err(|_| Error::Format("dimension overflow".into()))?;
    }
    let [n, p, l, m] = dims;
    let s = read_f64s(&mut r, 4)?;
    let seed = r.read_u64::<LE>()?;
    let q = r.read_u32::<LE>()? as usize;
    let mut covariate_names = Vec::with_capacity(q);
    for _ in 0..q {
        let len = r.read_u32::<LE>()? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        covariate_names.push(String::from_utf8(buf).map_err(|_| Error::Format("covariate name is not UTF-8".into()))?);
    }
    let flat = read_f64s(&mut r, 2 * n)?;
    let coords = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    let mut id_map = vec![0u64; n];
    r.read_u64_into::<LE>(&mut id_map)?;
    let id_map: Vec<usize> = id_map.into_iter().map(|v| v as usize).collect();
    if id_map.iter().any(|&i| i >= n) {
        return Err(Error::Format("bundle id_map out of range".into()));
    }
    let gamma_hat = read_f64s(&mut r, n + p)?;
    let (mut sigma2, mut beta, mut w) = (Vec::with_capacity(l), Vec::with_capacity(l * p), Vec::with_capacity(l * n));
    for _ in 0..l {
        sigma2.push(r.read_f64::<LE>()?);
        let _tau2 = r.read_f64::<LE>()?;
        beta.extend(read_f64s(&mut r, p)?);
        w.extend(read_f64s(&mut r, n)?);
    }
    let meta = FitMeta { n, p, m, phi: s[0], delta2: s[1], a_star: s[2], b_star: s[3], seed };
    let draws = PosteriorDraws::from_parts(n, p, meta.delta2, seed, sigma2, beta, w)?;
    Ok(PosteriorBundle { meta, covariate_names, coords, id_map, gamma_hat, draws })
}
