//! Binary serialization of posterior draws.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "DCFDRAWS"
//! version  u32
//! hlen     u64      length of the JSON header in bytes
//! header   hlen bytes of UTF-8 JSON (spec, chain settings, diagnostics,
//!          dimensions, caller context)
//! payload  f64 LE; per draw: σ², W (D×K), A (D×P), Z (N×K), μ_z (K),
//!          Σ_z (K×K), matrices row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{ChainDiagnostics, ChainSettings, Draw, PlfmSpec, PosteriorDraws};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DRAWS_MAGIC: &[u8; 8] = b"DCFDRAWS";
pub const DRAWS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: PlfmSpec,
    settings: ChainSettings,
    diagnostics: ChainDiagnostics,
    n_draws: usize,
    n_rows: usize,
    n_causes: usize,
    latent_dim: usize,
    n_covariates: usize,
    context: serde_json::Value,
}

/// Draws plus free-form caller metadata (column names, standardization,
/// holdout mask, resolved configuration, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct DrawsFile<T> {
    pub draws: PosteriorDraws<T>,
    pub context: serde_json::Value,
}

pub fn write_draws<T: Real>(
    path: &Path,
    draws: &PosteriorDraws<T>,
    context: &serde_json::Value,
) -> Result<()> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("no draws to write".into()));
    }
    let header = Header {
        spec: draws.spec.clone(),
        settings: draws.settings,
        diagnostics: draws.diagnostics.clone(),
        n_draws: draws.len(),
        n_rows: draws.n_rows(),
        n_causes: draws.n_causes(),
        latent_dim: draws.latent_dim(),
        n_covariates: draws.n_covariates(),
        context: context.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(DRAWS_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(DRAWS_VERSION).map_err(io)?;
    w.write_u64::<LittleEndian>(json.len() as u64).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for d in &draws.draws {
        let values = std::iter::once(d.sigma2)
            .chain(d.w.iter().copied())
            .chain(d.a.iter().copied())
            .chain(d.z.iter().copied())
            .chain(d.z_mean.iter().copied())
            .chain(d.z_cov.iter().copied());
        for v in values {
            w.write_f64::<LittleEndian>(v.to_f64_lossy()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_draws<T: Real>(path: &Path) -> Result<DrawsFile<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{} is not a draws file", path.display())))?;
    if &magic != DRAWS_MAGIC {
        return Err(Error::Format(format!("{} is not a draws file", path.display())));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != DRAWS_VERSION {
        return Err(Error::Format(format!(
            "unsupported draws file version {version} (expected {DRAWS_VERSION})"
        )));
    }
    let hlen = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let mut json = vec![0u8; hlen];
    r.read_exact(&mut json).map_err(io)?;
    let h: Header = serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;
    let (n, d, k, p) = (h.n_rows, h.n_causes, h.latent_dim, h.n_covariates);
    let mut next = |len: usize| -> Result<Vec<T>> {
        let mut buf = vec![0f64; len];
        r.read_f64_into::<LittleEndian>(&mut buf)
            .map_err(|_| Error::Format("draws file is truncated".into()))?;
        Ok(buf.into_iter().map(T::lit).collect())
    };
    let mut draws = Vec::with_capacity(h.n_draws);
    for _ in 0..h.n_draws {
        let sigma2 = next(1)?[0];
        let w = Array2::from_shape_vec((d, k), next(d * k)?).expect("sized");
        let a = Array2::from_shape_vec((d, p), next(d * p)?).expect("sized");
        let z = Array2::from_shape_vec((n, k), next(n * k)?).expect("sized");
        let z_mean = Array1::from(next(k)?);
        let z_cov = Array2::from_shape_vec((k, k), next(k * k)?).expect("sized");
        draws.push(Draw {
            w,
            a,
            sigma2,
            z,
            z_mean,
            z_cov,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(Error::Format("trailing bytes after draws payload".into()));
    }
    Ok(DrawsFile {
        draws: PosteriorDraws {
            spec: h.spec,
            settings: h.settings,
            draws,
            diagnostics: h.diagnostics,
        },
        context: h.context,
    })
}
