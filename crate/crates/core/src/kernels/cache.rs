//! On-disk kernel matrix cache.
//!
//! File layout (little-endian), version 1:
//!
//! ```text
//! magic "SHKC" | u32 version
//! u8  kernel id (0 structural, 1 statistical)
//! u64 params hash
//! u64 rows | u64 cols
//! rows × u64 row set ids | cols × u64 column set ids
//! rows × cols × f64 values, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{kernel_matrix_prepared, KernelId, KernelMatrix, KernelParams, PreparedSet, Threshold};
use crate::codec::{self, Decoder, Encoder};
use crate::data::SetId;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SHKC";
pub const VERSION: u32 = 1;
const KIND: &str = "kernel cache";

fn params_bytes(params: &KernelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(40);
    match params.mu {
        Threshold::Auto => out.extend_from_slice(&[0u8; 9]),
        Threshold::Fixed(m) => {
            out.push(1);
            out.extend_from_slice(&m.to_le_bytes());
        }
    }
    for v in [params.gamma_g, params.gamma_s, params.cov_ridge] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn digest_prefix(h: Sha256) -> u64 {
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Stable 64-bit digest of the kernel parameters.
pub fn params_hash(params: &KernelParams) -> u64 {
    let mut h = Sha256::new();
    h.update(params_bytes(params));
    digest_prefix(h)
}

pub fn write_kernel<W: Write>(mut w: W, km: &KernelMatrix, params: &KernelParams) -> Result<()> {
    codec::write_header(&mut w, MAGIC, VERSION)?;
    let mut w = Encoder::new(w);
    w.u8(km.kind().code())?;
    w.u64(params_hash(params))?;
    w.len(km.nrows())?;
    w.len(km.ncols())?;
    for id in km.row_ids().iter().chain(km.col_ids()) {
        w.u64(id.0)?;
    }
    for &v in km.values() {
        w.f64(v)?;
    }
    w.into_inner().flush()?;
    Ok(())
}

/// Reads a cached matrix and the params hash it was written with.
pub fn read_kernel<R: Read>(mut r: R) -> Result<(KernelMatrix, u64)> {
    codec::read_header(&mut r, KIND, MAGIC, VERSION)?;
    let mut d = Decoder::new(r, KIND);
    let kind = KernelId::from_code(d.u8()?)
        .ok_or_else(|| Error::format(KIND, "unknown kernel id"))?;
    let hash = d.u64()?;
    let rows = d.len("row")?;
    let cols = d.len("column")?;
    let row_ids = (0..rows).map(|_| d.u64().map(SetId)).collect::<Result<Vec<_>>>()?;
    let col_ids = (0..cols).map(|_| d.u64().map(SetId)).collect::<Result<Vec<_>>>()?;
    let values = d.f64s(rows * cols)?;
    d.finish()?;
    Ok((KernelMatrix::from_parts(kind, row_ids, col_ids, values)?, hash))
}

/// Directory of cached kernel matrices keyed by parameters and set contents.
#[derive(Debug, Clone)]
pub struct KernelCache {
    dir: PathBuf,
}

impl KernelCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn key(
        rows: &[PreparedSet<'_>],
        cols: &[PreparedSet<'_>],
        kind: KernelId,
        params: &KernelParams,
    ) -> String {
        let mut h = Sha256::new();
        h.update([kind.code()]);
        h.update(params_bytes(params));
        for side in [rows, cols] {
            h.update((side.len() as u64).to_le_bytes());
            for p in side {
                h.update(p.set.id().0.to_le_bytes());
                h.update((p.set.len() as u64).to_le_bytes());
                for v in p.set.values() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        format!("{}-{:016x}.skc", kind.name(), digest_prefix(h))
    }

    /// Returns the cached matrix when present and consistent, otherwise
    /// computes and stores it.
    pub fn get_or_compute(
        &self,
        rows: &[PreparedSet<'_>],
        cols: &[PreparedSet<'_>],
        kind: KernelId,
        params: &KernelParams,
    ) -> Result<KernelMatrix> {
        let path = self.dir.join(Self::key(rows, cols, kind, params));
        if let Ok(f) = File::open(&path) {
            if let Ok((km, hash)) = read_kernel(BufReader::new(f)) {
                let ids_match = km.row_ids().iter().copied().eq(rows.iter().map(|p| p.set.id()))
                    && km.col_ids().iter().copied().eq(cols.iter().map(|p| p.set.id()));
                if km.kind() == kind && hash == params_hash(params) && ids_match {
                    return Ok(km);
                }
            }
        }
        let km = kernel_matrix_prepared(rows, cols, kind, params)?;
        let tmp = path.with_extension("tmp");
        write_kernel(BufWriter::new(File::create(&tmp)?), &km, params)?;
        std::fs::rename(&tmp, &path)?;
        Ok(km)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PointSet;
    use crate::kernels::prepare_all;

    fn params() -> KernelParams {
        KernelParams {
            mu: Threshold::Fixed(1.5),
            gamma_g: 0.25,
            gamma_s: 2.0,
            cov_ridge: 1e-3,
        }
    }

    #[test]
    fn write_read_roundtrip() {
        let sets = [
            PointSet::new(SetId(4), 2, vec![0.0, 1.0, 1.0, 0.5], None).unwrap(),
            PointSet::new(SetId(9), 2, vec![2.0, 1.0, 0.0, 0.0, 1.0, 1.0], None).unwrap(),
        ];
        let km = super::super::kernel_matrix(&sets, &sets, KernelId::Structural, &params()).unwrap();
        let mut buf = Vec::new();
        write_kernel(&mut buf, &km, &params()).unwrap();
        let (back, hash) = read_kernel(&buf[..]).unwrap();
        assert_eq!(back, km);
        assert_eq!(hash, params_hash(&params()));

        let mut bumped = buf.clone();
        bumped[4] = 2;
        assert!(matches!(read_kernel(&bumped[..]), Err(Error::Version { found: 2, .. })));
        assert!(read_kernel(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn cache_hit_returns_same_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let cache = KernelCache::new(dir.path()).unwrap();
        let sets = [
            PointSet::new(SetId(1), 1, vec![0.0, 1.0, 3.0], None).unwrap(),
            PointSet::new(SetId(2), 1, vec![2.0, 2.5], None).unwrap(),
        ];
        let refs: Vec<&PointSet> = sets.iter().collect();
        let prepared = prepare_all(&refs, &params()).unwrap();
        let first = cache
            .get_or_compute(&prepared, &prepared, KernelId::Statistical, &params())
            .unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let second = cache
            .get_or_compute(&prepared, &prepared, KernelId::Statistical, &params())
            .unwrap();
        assert_eq!(first, second);
    }
}
