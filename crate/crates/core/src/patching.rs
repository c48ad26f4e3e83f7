//! Overlapping patch extraction, overlap accounting and weighted reassembly.

use ndarray::{Array2, ArrayView2};

use crate::{par, Error, ImageMatrix, Result};

/// Top-left corner of a patch, `(row, col)`.
pub type Position = (usize, usize);

/// Anchors of all patches cut from an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub shape: (usize, usize),
    pub patch_size: usize,
    pub stride: usize,
    /// Row-major, unique, and covering every pixel.
    pub positions: Vec<Position>,
}

impl PatchGrid {
    pub fn new(shape: (usize, usize), patch_size: usize, stride: usize) -> Result<Self> {
        let (rows, cols) = shape;
        if patch_size == 0 {
            return Err(Error::InvalidInput("patch size must be at least 1".into()));
        }
        if patch_size > rows.min(cols) {
            return Err(Error::PatchTooLarge {
                patch: patch_size,
                rows,
                cols,
            });
        }
        if stride == 0 || stride > patch_size {
            return Err(Error::InvalidInput(format!("stride {stride} outside 1..={patch_size}")));
        }
        let row_anchors = anchors(rows, patch_size, stride);
        let col_anchors = anchors(cols, patch_size, stride);
        let positions = row_anchors
            .iter()
            .flat_map(|&r| col_anchors.iter().map(move |&c| (r, c)))
            .collect();
        Ok(Self {
            shape,
            patch_size,
            stride,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// `0, s, 2s, …` with the last anchor clamped to `len - p`.
fn anchors(len: usize, p: usize, stride: usize) -> Vec<usize> {
    let last = len - p;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().expect("0 is always an anchor") != last {
        out.push(last);
    }
    out
}

/// Vectorised patches, one row per grid position.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub grid: PatchGrid,
    /// `N × p²`, each row a patch flattened in row-major order.
    pub vectors: Array2<f64>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Cut every patch of the given size and stride out of `image`.
pub fn extract_patches(image: ArrayView2<'_, f64>, patch_size: usize, stride: usize) -> Result<PatchSet> {
    let grid = PatchGrid::new(image.dim(), patch_size, stride)?;
    let p = patch_size;
    let rows = par::map(&grid.positions, |&(r, c)| {
        let mut v = Vec::with_capacity(p * p);
        for i in 0..p {
            v.extend(image.row(r + i).iter().skip(c).take(p));
        }
        v
    });
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let vectors = Array2::from_shape_vec((grid.len(), p * p), flat).expect("N·p² values");
    Ok(PatchSet { grid, vectors })
}

/// Per-pixel count of the listed patches covering it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapMap {
    pub counts: Array2<u32>,
}

impl OverlapMap {
    /// Number of pixels covered more than once.
    pub fn overlapping_pixels(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 1).count()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

pub fn overlap_map(positions: &[Position], patch_size: usize, shape: (usize, usize)) -> Result<OverlapMap> {
    let (rows, cols) = shape;
    let mut counts = Array2::<u32>::zeros(shape);
    for &(r, c) in positions {
        if r + patch_size > rows || c + patch_size > cols {
            return Err(Error::InvalidPosition {
                row: r,
                col: c,
                rows,
                cols,
            });
        }
        counts
            .slice_mut(ndarray::s![r..r + patch_size, c..c + patch_size])
            .mapv_inplace(|v| v + 1);
    }
    Ok(OverlapMap { counts })
}

/// Exact overlap bookkeeping for one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OverlapStats {
    /// Pixels covered by more than one patch of the cluster.
    pub overlapping: usize,
    pub patches: usize,
    pub patch_area: usize,
}

impl OverlapStats {
    pub fn from_positions(positions: &[Position], patch_size: usize, shape: (usize, usize)) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyCluster);
        }
        let map = overlap_map(positions, patch_size, shape)?;
        Ok(Self {
            overlapping: map.overlapping_pixels(),
            patches: positions.len(),
            patch_area: patch_size * patch_size,
        })
    }

    /// Overlap proportion β: overlapping pixels over `p²·N`.
    pub fn beta(&self) -> f64 {
        self.overlapping as f64 / (self.patch_area * self.patches) as f64
    }

    /// `⌈N·(1 − β)⌉` evaluated in integers: `⌈(p²N − o) / p²⌉`.
    pub fn effective_patches(&self) -> usize {
        let kept = self.patch_area * self.patches - self.overlapping;
        kept.div_ceil(self.patch_area)
    }
}

/// Overlap proportion of a cluster's patches, counted against the cluster's
/// own overlap map.
pub fn overlap_proportion(positions: &[Position], patch_size: usize, shape: (usize, usize)) -> Result<f64> {
    OverlapStats::from_positions(positions, patch_size, shape).map(|s| s.beta())
}

/// `⌈N·(1 − β)⌉`, at least 1.
///
/// β is expected to be a pixel-count ratio with denominator `p²·N`; a small
/// guard absorbs the rounding in `1 − β` so exact integers do not round up.
pub fn effective_patch_count(patches: usize, beta: f64) -> usize {
    let raw = patches as f64 * (1.0 - beta);
    let guarded = raw - 1e-9 * raw.abs().max(1.0);
    (guarded.ceil().max(1.0)) as usize
}

/// One contributor to a reconstruction: patch rows plus where they go.
pub struct PatchBlock<'a> {
    pub rows: ArrayView2<'a, f64>,
    pub positions: &'a [Position],
}

/// Average overlapping patch values back into an `m × n` image.
///
/// Each pixel ends up as the mean of every patch value covering it. The mean
/// is accumulated incrementally, so identical contributions reproduce the
/// input bit-exactly. No clamping happens here.
pub fn reconstruct_image(blocks: &[PatchBlock<'_>], shape: (usize, usize), patch_size: usize) -> Result<ImageMatrix> {
    let (rows, cols) = shape;
    let p = patch_size;
    let mut mean = Array2::<f64>::zeros(shape);
    let mut weight = Array2::<u32>::zeros(shape);
    for block in blocks {
        if block.rows.nrows() != block.positions.len() || block.rows.ncols() != p * p {
            return Err(Error::InvalidInput(format!(
                "patch block is {:?} for {} positions of size {p}",
                block.rows.dim(),
                block.positions.len()
            )));
        }
        for (values, &(r, c)) in block.rows.rows().into_iter().zip(block.positions) {
            if r + p > rows || c + p > cols {
                return Err(Error::InvalidPosition {
                    row: r,
                    col: c,
                    rows,
                    cols,
                });
            }
            for di in 0..p {
                for dj in 0..p {
                    let idx = (r + di, c + dj);
                    weight[idx] += 1;
                    let v = values[di * p + dj];
                    mean[idx] += (v - mean[idx]) / f64::from(weight[idx]);
                }
            }
        }
    }
    if let Some(((row, col), _)) = weight.indexed_iter().find(|(_, &w)| w == 0) {
        return Err(Error::CoverageGap { row, col });
    }
    Ok(mean)
}
