//! Binary archive for compressed images.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    b"CLRA"
//! version  u16
//! m n p stride K MAX          u32 each
//! K times:
//!   N_k r_k                   u32 each
//!   beta                      f64
//!   N_k positions             (row u32, col u32)
//!   U  (N_k × r_k)            f32, row-major
//!   S  (r_k)                  f32
//!   Vt (r_k × p²)             f32, row-major
//! ```
//!
//! A global (whole-image) factorisation uses the same header with `p = 0`,
//! `stride = 0` and `K = 1`; its single block has `N = m`, `beta = 0`, no
//! positions, and `Vt` of shape `r × n`.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use crate::linalg::TruncatedFactors;
use crate::patching::{OverlapStats, Position};
use crate::pipeline::{CompressedCluster, CompressedImage};
use crate::{Error, ImageMatrix, Result};

pub const MAGIC: [u8; 4] = *b"CLRA";
pub const VERSION: u16 = 1;

/// Whole-image truncated SVD.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalImage {
    pub shape: (usize, usize),
    pub max_value: u32,
    pub factors: TruncatedFactors,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Archive {
    Clustered(CompressedImage),
    Global(GlobalImage),
}

impl Archive {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Archive::Clustered(c) => c.shape,
            Archive::Global(g) => g.shape,
        }
    }

    pub fn max_value(&self) -> u32 {
        match self {
            Archive::Clustered(c) => c.max_value,
            Archive::Global(g) => g.max_value,
        }
    }

    /// Stored factor elements, excluding header and positions.
    pub fn element_count(&self) -> usize {
        match self {
            Archive::Clustered(c) => c.element_count(),
            Archive::Global(g) => g.factors.element_count(),
        }
    }

    pub fn decompress(&self) -> Result<ImageMatrix> {
        match self {
            Archive::Clustered(c) => c.decompress(),
            Archive::Global(g) => Ok(g.factors.reconstruct()),
        }
    }

    /// The archive as it reads back after a write: every factor entry
    /// rounded through `f32`.
    pub fn quantized(&self) -> Self {
        match self {
            Archive::Clustered(c) => {
                let mut c = c.clone();
                for cl in &mut c.clusters {
                    cl.factors = quantize(&cl.factors);
                }
                Archive::Clustered(c)
            }
            Archive::Global(g) => Archive::Global(GlobalImage {
                factors: quantize(&g.factors),
                ..g.clone()
            }),
        }
    }
}

fn quantize(f: &TruncatedFactors) -> TruncatedFactors {
    let q = |v: &f64| f64::from(*v as f32);
    TruncatedFactors {
        u: f.u.map(q),
        s: f.s.map(q),
        vt: f.vt.map(q),
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

fn write_f32s<'a, W: Write>(w: &mut W, values: impl Iterator<Item = &'a f64>) -> io::Result<()> {
    for &v in values {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

fn write_factors<W: Write>(w: &mut W, f: &TruncatedFactors) -> io::Result<()> {
    // Iterating a standard-layout array visits it in row-major order.
    write_f32s(w, f.u.iter())?;
    write_f32s(w, f.s.iter())?;
    write_f32s(w, f.vt.iter())
}

pub fn write_archive<W: Write>(w: &mut W, archive: &Archive) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    let (m, n) = archive.shape();
    match archive {
        Archive::Clustered(c) => {
            for (v, what) in [
                (m, "rows"),
                (n, "cols"),
                (c.patch_size, "patch size"),
                (c.stride, "stride"),
                (c.clusters.len(), "cluster count"),
            ] {
                w.write_u32::<LittleEndian>(to_u32(v, what)?)?;
            }
            w.write_u32::<LittleEndian>(c.max_value)?;
            for cl in &c.clusters {
                w.write_u32::<LittleEndian>(to_u32(cl.len(), "patch count")?)?;
                w.write_u32::<LittleEndian>(to_u32(cl.rank(), "rank")?)?;
                w.write_f64::<LittleEndian>(cl.beta())?;
                for &(r, col) in &cl.positions {
                    w.write_u32::<LittleEndian>(to_u32(r, "row")?)?;
                    w.write_u32::<LittleEndian>(to_u32(col, "col")?)?;
                }
                write_factors(w, &cl.factors)?;
            }
        }
        Archive::Global(g) => {
            for v in [to_u32(m, "rows")?, to_u32(n, "cols")?, 0, 0, 1, g.max_value] {
                w.write_u32::<LittleEndian>(v)?;
            }
            w.write_u32::<LittleEndian>(to_u32(m, "rows")?)?;
            w.write_u32::<LittleEndian>(to_u32(g.factors.rank(), "rank")?)?;
            w.write_f64::<LittleEndian>(0.0)?;
            write_factors(w, &g.factors)?;
        }
    }
    Ok(())
}

pub fn to_bytes(archive: &Archive) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_archive(&mut buf, archive)?;
    Ok(buf)
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("archive is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    r.read_u32::<LittleEndian>().map(|v| v as usize).map_err(truncated)
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut data = vec![0f32; rows * cols];
    r.read_f32_into::<LittleEndian>(&mut data).map_err(truncated)?;
    Ok(Array2::from_shape_vec((rows, cols), data.into_iter().map(f64::from).collect()).expect("sized buffer"))
}

fn read_factors<R: Read>(r: &mut R, rows: usize, rank: usize, cols: usize) -> Result<TruncatedFactors> {
    let u = read_matrix(r, rows, rank)?;
    let s: Array1<f64> = read_matrix(r, 1, rank)?.into_shape_with_order(rank).expect("1 x r");
    let vt = read_matrix(r, rank, cols)?;
    if s.iter().any(|v| !v.is_finite()) || u.iter().chain(vt.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite factor entry".into()));
    }
    TruncatedFactors::from_parts(u, s, vt).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_archive<R: Read>(r: &mut R) -> Result<Archive> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = r.read_u16::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let m = read_u32(r)?;
    let n = read_u32(r)?;
    let p = read_u32(r)?;
    let stride = read_u32(r)?;
    let k = read_u32(r)?;
    let max_value = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if m == 0 || n == 0 {
        return Err(Error::Format(format!("empty image shape {m}x{n}")));
    }

    let archive = if p == 0 {
        if stride != 0 || k != 1 {
            return Err(Error::Format("global archive must have stride 0 and one block".into()));
        }
        let rows = read_u32(r)?;
        let rank = read_u32(r)?;
        let _beta = r.read_f64::<LittleEndian>().map_err(truncated)?;
        if rows != m || rank == 0 || rank > m.min(n) {
            return Err(Error::Format(format!("global block {rows} rows, rank {rank}")));
        }
        Archive::Global(GlobalImage {
            shape: (m, n),
            max_value,
            factors: read_factors(r, m, rank, n)?,
        })
    } else {
        if p > m.min(n) || stride == 0 || stride > p {
            return Err(Error::Format(format!(
                "patch size {p} / stride {stride} invalid for {m}x{n}"
            )));
        }
        if k == 0 {
            return Err(Error::Format("archive holds no clusters".into()));
        }
        let area = p * p;
        let mut clusters = Vec::with_capacity(k.min(1 << 16));
        for _ in 0..k {
            let patches = read_u32(r)?;
            let rank = read_u32(r)?;
            let beta = r.read_f64::<LittleEndian>().map_err(truncated)?;
            if patches == 0 || rank == 0 || rank > patches.min(area) {
                return Err(Error::Format(format!("cluster with {patches} patches and rank {rank}")));
            }
            let mut positions: Vec<Position> = Vec::with_capacity(patches.min(1 << 20));
            for _ in 0..patches {
                let row = read_u32(r)?;
                let col = read_u32(r)?;
                if row + p > m || col + p > n {
                    return Err(Error::Format(format!("patch at ({row}, {col}) outside {m}x{n}")));
                }
                positions.push((row, col));
            }
            let factors = read_factors(r, patches, rank, area)?;
            let overlap = OverlapStats::from_positions(&positions, p, (m, n))?;
            if overlap.beta() != beta {
                log::warn!(
                    "stored overlap proportion {beta} differs from recomputed {}",
                    overlap.beta()
                );
            }
            clusters.push(CompressedCluster {
                factors,
                positions,
                overlap,
            });
        }
        Archive::Clustered(CompressedImage {
            shape: (m, n),
            patch_size: p,
            stride,
            max_value,
            clusters,
        })
    };

    let mut rest = [0u8; 1];
    match r.read(&mut rest)? {
        0 => Ok(archive),
        _ => Err(Error::Format("trailing bytes after archive".into())),
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Archive> {
    read_archive(&mut &bytes[..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{compress_clustered, compress_global, ClusterParams};

    fn sample_image() -> ImageMatrix {
        Array2::from_shape_fn((20, 18), |(i, j)| {
            ((i * 7 + j * 3) % 23) as f64 * 9.0 + (i as f64).sin()
        })
    }

    fn clustered() -> Archive {
        let params = ClusterParams {
            clusters: 3,
            alpha: 0.9,
            ..ClusterParams::new(4)
        };
        Archive::Clustered(compress_clustered(sample_image().view(), &params).unwrap().0)
    }

    #[test]
    fn header_layout() {
        let bytes = to_bytes(&clustered()).unwrap();
        assert_eq!(&bytes[..4], b"CLRA");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        let word = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap());
        assert_eq!(
            (word(0), word(1), word(2), word(3), word(4), word(5)),
            (20, 18, 4, 2, 3, 255)
        );
    }

    #[test]
    fn round_trip_applies_quantization_once() {
        for archive in [clustered(), {
            let (f, _) = compress_global(sample_image().view(), 3).unwrap();
            Archive::Global(GlobalImage {
                shape: (20, 18),
                max_value: 255,
                factors: f,
            })
        }] {
            let bytes = to_bytes(&archive).unwrap();
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, archive.quantized());
            assert_eq!(to_bytes(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn byte_length_matches_layout() {
        let archive = clustered();
        let Archive::Clustered(c) = &archive else {
            unreachable!()
        };
        let expected = 4
            + 2
            + 6 * 4
            + c.clusters
                .iter()
                .map(|cl| 8 + 8 + 8 * cl.len() + 4 * cl.element_count())
                .sum::<usize>();
        assert_eq!(to_bytes(&archive).unwrap().len(), expected);
    }

    #[test]
    fn rejects_bad_input() {
        let bytes = to_bytes(&clustered()).unwrap();
        for cut in [0, 3, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(from_bytes(&bytes[..cut]), Err(Error::Format(_))),
                "cut at {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(Error::Format(_))));
    }
}
