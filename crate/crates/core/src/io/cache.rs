//! On-disk cache of training factors.
//!
//! Files are named by the SHA-256 of (location coordinates, m, ordering,
//! kernel family, φ, target, δ²). Layout, little-endian:
//!
//! ```text
//! magic    8 bytes "CNNGPFC\0"
//! version  u32
//! n, nnz   u64 each
//! phi      f64
//! target   u8 (0 latent, 1 response), then delta2 f64
//! row_ptr  (n + 1) × u64
//! cols     nnz × u64
//! vals     nnz × f64
//! d        n × f64
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::covariance::KernelSpec;
use crate::error::{Error, Result};
use crate::geometry::{LocationSet, OrderingStrategy};
use crate::nngp_factor::{FactorTarget, NNGPFactor};
use crate::sparse_solver::CsrMatrix;

const MAGIC: [u8; 8] = *b"CNNGPFC\0";
const VERSION: u32 = 1;

/// Content key of one factor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorKey(String);

impl FactorKey {
    pub fn new(locs: &LocationSet, m: usize, ordering: OrderingStrategy, kernel: &KernelSpec, target: FactorTarget) -> Self {
        let mut h = Sha256::new();
        for c in locs.coords() {
            h.update(c[0].to_le_bytes());
            h.update(c[1].to_le_bytes());
        }
        h.update((m as u64).to_le_bytes());
        h.update(ordering.to_string().as_bytes());
        h.update(kernel.family().to_string().as_bytes());
        h.update(kernel.phi().to_le_bytes());
        match target {
            FactorTarget::Latent => h.update([0u8]),
            FactorTarget::Response { delta2 } => {
                h.update([1u8]);
                h.update(delta2.to_le_bytes());
            }
        }
        FactorKey(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Directory of cached factors.
#[derive(Clone, Debug)]
pub struct FactorCache {
    dir: PathBuf,
}

impl FactorCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn path(&self, key: &FactorKey) -> PathBuf {
        self.dir.join(format!("{}.factor", key.as_str()))
    }

    /// Returns the cached factor for `key`, or builds and stores it.
    /// Unreadable cache entries are rebuilt.
    pub fn get_or_build(&self, key: &FactorKey, build: impl FnOnce() -> Result<NNGPFactor>) -> Result<NNGPFactor> {
        let path = self.path(key);
        if path.exists() {
            match read_factor(&path) {
                Ok(f) => return Ok(f),
                Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", path.display()),
            }
        }
        let f = build()?;
        // write to a temporary name first so concurrent readers never see a partial file
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        write_factor(&tmp, &f)?;
        std::fs::rename(&tmp, &path)?;
        Ok(f)
    }
}

fn write_factor(path: &Path, f: &NNGPFactor) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_u32::<LE>(VERSION)?;
    out.write_u64::<LE>(f.len() as u64)?;
    out.write_u64::<LE>(f.a().nnz() as u64)?;
    out.write_f64::<LE>(f.phi())?;
    match f.target() {
        FactorTarget::Latent => {
            out.write_u8(0)?;
            out.write_f64::<LE>(0.0)?;
        }
        FactorTarget::Response { delta2 } => {
            out.write_u8(1)?;
            out.write_f64::<LE>(delta2)?;
        }
    }
    for &v in f.a().row_ptr().iter().chain(f.a().cols()) {
        out.write_u64::<LE>(v as u64)?;
    }
    for &v in f.a().vals().iter().chain(f.d()) {
        out.write_f64::<LE>(v)?;
    }
    out.flush()?;
    Ok(())
}

fn read_factor(path: &Path) -> Result<NNGPFactor> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != MAGIC || r.read_u32::<LE>()? != VERSION {
        return Err(Error::Format("not a factor cache file".into()));
    }
    let n = r.read_u64::<LE>()? as usize;
    let nnz = r.read_u64::<LE>()? as usize;
    let phi = r.read_f64::<LE>()?;
    let target = match (r.read_u8()?, r.read_f64::<LE>()?) {
        (0, _) => FactorTarget::Latent,
        (1, delta2) => FactorTarget::Response { delta2 },
        (t, _) => return Err(Error::Format(format!("unknown factor target tag {t}"))),
    };
    let mut idx = vec![0u64; n + 1 + nnz];
    r.read_u64_into::<LE>(&mut idx)?;
    let idx: Vec<usize> = idx.into_iter().map(|v| v as usize).collect();
    let mut vals = vec![0.0; nnz + n];
    r.read_f64_into::<LE>(&mut vals)?;
    let d = vals.split_off(nnz);
    let (row_ptr, cols) = idx.split_at(n + 1);
    if row_ptr[n] != nnz || row_ptr.windows(2).any(|w| w[0] > w[1]) || cols.iter().any(|&c| c >= n) {
        return Err(Error::Format("corrupt factor cache entry".into()));
    }
    let a = CsrMatrix::from_parts(n, n, row_ptr.to_vec(), cols.to_vec(), vals);
    NNGPFactor::from_parts(a, d, target, phi)
}
