//! End-to-end compression: the global truncated-SVD baseline, the
//! cluster-based compressor, and the compression-factor arithmetic that puts
//! the two on a common scale.
//!
//! Compression factors are element counts: the original holds `m·n` (or
//! `N·p²` for a patch set) scalars, and a rank-`r` factorisation of an
//! `a × b` matrix stores `r·(a + b + 1)`.

use std::time::Instant;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::clustering::{self, Init, KMeansConfig, DEFAULT_MAX_ITER};
use crate::linalg::{self, SvdFactors, TruncatedFactors};
use crate::patching::{self, OverlapStats, PatchBlock, Position};
use crate::report::{ClusterSummary, CompressionReport, Method};
use crate::{par, Error, ImageMatrix, Result, MAX_8BIT};

/// Parameters of the cluster-based compressor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub patch_size: usize,
    pub stride: usize,
    pub clusters: usize,
    /// Energy fraction each cluster's truncation must retain.
    pub alpha: f64,
    pub seed: u64,
    pub max_iter: usize,
    pub init: Init,
}

impl ClusterParams {
    /// Defaults: half-overlapping stride, 8 clusters, α = 0.95, seed 0.
    pub fn new(patch_size: usize) -> Self {
        Self {
            patch_size,
            stride: (patch_size / 2).max(1),
            clusters: 8,
            alpha: 0.95,
            seed: 0,
            max_iter: DEFAULT_MAX_ITER,
            init: Init::Random,
        }
    }

    fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            clusters: self.clusters,
            seed: self.seed,
            max_iter: self.max_iter,
            init: self.init,
        }
    }
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self::new(8)
    }
}

/// Storage-relevant numbers of one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterAccount {
    pub patches: usize,
    pub rank: usize,
    pub effective_patches: usize,
}

/// One cluster's truncated factors together with where its patches live.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedCluster {
    /// Factors of the `N_k × p²` cluster matrix.
    pub factors: TruncatedFactors,
    pub positions: Vec<Position>,
    pub overlap: OverlapStats,
}

impl CompressedCluster {
    pub fn rank(&self) -> usize {
        self.factors.rank()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn beta(&self) -> f64 {
        self.overlap.beta()
    }

    pub fn effective_patches(&self) -> usize {
        self.overlap.effective_patches()
    }

    /// `r·(N_k + p² + 1)`.
    pub fn element_count(&self) -> usize {
        self.factors.element_count()
    }

    pub fn account(&self) -> ClusterAccount {
        ClusterAccount {
            patches: self.len(),
            rank: self.rank(),
            effective_patches: self.effective_patches(),
        }
    }
}

/// Everything needed to rebuild an image from its cluster factors.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedImage {
    pub shape: (usize, usize),
    pub patch_size: usize,
    pub stride: usize,
    pub max_value: u32,
    pub clusters: Vec<CompressedCluster>,
}

impl CompressedImage {
    pub fn patch_count(&self) -> usize {
        self.clusters.iter().map(CompressedCluster::len).sum()
    }

    pub fn element_count(&self) -> usize {
        self.clusters.iter().map(CompressedCluster::element_count).sum()
    }

    pub fn accounts(&self) -> Vec<ClusterAccount> {
        self.clusters.iter().map(CompressedCluster::account).collect()
    }

    pub fn cf_overall(&self) -> f64 {
        cf_overall(&self.accounts(), self.patch_size, self.patch_count())
    }

    pub fn cf_overall_eff(&self) -> f64 {
        cf_overall_eff(&self.accounts(), self.patch_size)
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.clusters.iter().map(CompressedCluster::rank).collect()
    }

    /// Rebuild the image by averaging the reconstructed patches.
    pub fn decompress(&self) -> Result<ImageMatrix> {
        let rows = par::map(&self.clusters, |c| c.factors.reconstruct());
        let blocks: Vec<PatchBlock<'_>> = rows
            .iter()
            .zip(&self.clusters)
            .map(|(r, c)| PatchBlock {
                rows: r.view(),
                positions: &c.positions,
            })
            .collect();
        patching::reconstruct_image(&blocks, self.shape, self.patch_size)
    }
}

pub fn decompress(archive: &CompressedImage) -> Result<ImageMatrix> {
    archive.decompress()
}

/// `mn / (r·(m + n + 1))`.
pub fn cf_global(rows: usize, cols: usize, rank: usize) -> f64 {
    (rows * cols) as f64 / (rank * (rows + cols + 1)) as f64
}

/// Rank implied by a target global compression factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankForCf {
    pub rank: usize,
    /// The raw ceiling exceeded `min(m, n)` and was clamped to full rank.
    pub clamped: bool,
}

/// `⌈mn / (CF·(m + n + 1))⌉`, clamped to `[1, min(m, n)]`.
pub fn rank_for_cf(rows: usize, cols: usize, cf_target: f64) -> Result<RankForCf> {
    if !(cf_target > 0.0 && cf_target.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "compression factor {cf_target} must be positive and finite"
        )));
    }
    let raw = (rows * cols) as f64 / (cf_target * (rows + cols + 1) as f64);
    // Absorb rounding so an exactly attainable CF maps back to its rank.
    let ceil = (raw - 1e-9 * raw).ceil().max(1.0);
    let max = rows.min(cols);
    if ceil > max as f64 {
        Ok(RankForCf {
            rank: max,
            clamped: true,
        })
    } else {
        Ok(RankForCf {
            rank: ceil as usize,
            clamped: false,
        })
    }
}

/// Per-cluster factor for non-overlapping patches, `N_k p² / (r (N_k + p² + 1))`.
pub fn cf_cluster(patch_size: usize, patches: usize, rank: usize) -> f64 {
    let area = patch_size * patch_size;
    (patches * area) as f64 / (rank * (patches + area + 1)) as f64
}

/// Per-cluster factor with the overlap-corrected numerator `N_eff p²`.
pub fn cf_cluster_eff(patch_size: usize, effective: usize, patches: usize, rank: usize) -> f64 {
    let area = patch_size * patch_size;
    (effective * area) as f64 / (rank * (patches + area + 1)) as f64
}

fn stored_elements(clusters: &[ClusterAccount], patch_size: usize) -> usize {
    let area = patch_size * patch_size;
    clusters.iter().map(|c| c.rank * (c.patches + area + 1)).sum()
}

/// `N p² / Σ_k r_k (N_k + p² + 1)` with `N` counting every extracted patch.
pub fn cf_overall(clusters: &[ClusterAccount], patch_size: usize, total_patches: usize) -> f64 {
    (total_patches * patch_size * patch_size) as f64 / stored_elements(clusters, patch_size) as f64
}

/// `(Σ_k N_eff,k) p² / Σ_k r_k (N_k + p² + 1)`.
pub fn cf_overall_eff(clusters: &[ClusterAccount], patch_size: usize) -> f64 {
    let effective: usize = clusters.iter().map(|c| c.effective_patches).sum();
    (effective * patch_size * patch_size) as f64 / stored_elements(clusters, patch_size) as f64
}

/// Relative gap `|CF_eff − CF_global| / CF_eff`.
pub fn cf_threshold(cf_eff: f64, cf_global: f64) -> f64 {
    (cf_eff - cf_global).abs() / cf_eff
}

/// Outcome of searching for a global rank whose CF matches a cluster CF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalMatch {
    pub rank: usize,
    pub cf: f64,
    pub threshold: f64,
    pub matched: bool,
}

/// Scan every global rank for the CF closest to `cf_eff`.
///
/// The CFs reachable by the global method form a discrete set, so a match
/// within `tolerance` may not exist; that case is reported with
/// `matched = false` rather than as an error. Ties go to the lower rank.
pub fn match_global_rank(rows: usize, cols: usize, cf_eff: f64, tolerance: f64) -> Result<GlobalMatch> {
    if cf_eff.is_nan() || cf_eff <= 0.0 || tolerance.is_nan() || tolerance < 0.0 {
        return Err(Error::InvalidInput(format!(
            "cannot match CF {cf_eff} with tolerance {tolerance}"
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for rank in 1..=rows.min(cols) {
        let gap = (cf_global(rows, cols, rank) - cf_eff).abs();
        if best.is_none_or(|(_, g)| gap < g) {
            best = Some((rank, gap));
        }
    }
    let (rank, _) = best.ok_or_else(|| Error::InvalidInput("empty image".into()))?;
    let cf = cf_global(rows, cols, rank);
    let threshold = cf_threshold(cf_eff, cf);
    Ok(GlobalMatch {
        rank,
        cf,
        threshold,
        matched: threshold <= tolerance,
    })
}

/// Truncated SVD of the whole image at rank `r_g`.
pub fn compress_global(image: ArrayView2<'_, f64>, rank: usize) -> Result<(TruncatedFactors, CompressionReport)> {
    let start = Instant::now();
    let (rows, cols) = image.dim();
    let max = rows.min(cols);
    if rank == 0 || rank > max {
        return Err(Error::InvalidRank { rank, max });
    }
    let factors = linalg::truncate(&linalg::svd(image)?, rank)?;
    let cf = cf_global(rows, cols, rank);
    let report = CompressionReport {
        method: Method::Global,
        cf_nominal: cf,
        cf_effective: cf,
        ranks: vec![rank],
        rank_clamped: false,
        stored_elements: factors.element_count(),
        clusters: Vec::new(),
        kmeans_iterations: None,
        cost: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((factors, report))
}

/// Truncate one cluster matrix at the rank its energy threshold demands.
pub fn compress_cluster(cluster_matrix: ArrayView2<'_, f64>, alpha: f64) -> Result<TruncatedFactors> {
    let factors = linalg::svd(cluster_matrix)?;
    truncate_for_energy(&factors, alpha)
}

fn truncate_for_energy(factors: &SvdFactors, alpha: f64) -> Result<TruncatedFactors> {
    let rank = linalg::rank_for_energy(factors.s.as_slice().expect("contiguous"), alpha)?;
    linalg::truncate(factors, rank)
}

/// Full SVD of one cluster, kept so several energy thresholds can be tried
/// without redoing the decomposition.
#[derive(Debug, Clone)]
pub struct ClusterSpectrum {
    pub svd: SvdFactors,
    pub positions: Vec<Position>,
    pub overlap: OverlapStats,
}

/// Patches, clusters and per-cluster SVDs of an image: every stage of the
/// cluster pipeline that does not depend on α.
#[derive(Debug, Clone)]
pub struct ClusteredDecomposition {
    pub shape: (usize, usize),
    pub patch_size: usize,
    pub stride: usize,
    pub patch_count: usize,
    pub kmeans_iterations: usize,
    pub clusters: Vec<ClusterSpectrum>,
}

impl ClusteredDecomposition {
    pub fn analyse(image: ArrayView2<'_, f64>, params: &ClusterParams) -> Result<Self> {
        let patches = patching::extract_patches(image, params.patch_size, params.stride)?;
        let model = clustering::kmeans(&patches, &params.kmeans())?;
        let members: Vec<Vec<usize>> = (0..model.clusters()).map(|k| model.members(k)).collect();
        let shape = image.dim();
        let clusters = par::try_map(&members, |idx| {
            let matrix = patches.vectors.select(ndarray::Axis(0), idx);
            let positions: Vec<Position> = idx.iter().map(|&i| patches.grid.positions[i]).collect();
            let overlap = OverlapStats::from_positions(&positions, params.patch_size, shape)?;
            Ok::<_, Error>(ClusterSpectrum {
                svd: linalg::svd(matrix.view())?,
                positions,
                overlap,
            })
        })?;
        Ok(Self {
            shape,
            patch_size: params.patch_size,
            stride: params.stride,
            patch_count: patches.len(),
            kmeans_iterations: model.iterations,
            clusters,
        })
    }

    pub fn ranks_for(&self, alpha: f64) -> Result<Vec<usize>> {
        self.clusters
            .iter()
            .map(|c| linalg::rank_for_energy(c.svd.s.as_slice().expect("contiguous"), alpha))
            .collect()
    }

    fn accounts_for(&self, ranks: &[usize]) -> Vec<ClusterAccount> {
        self.clusters
            .iter()
            .zip(ranks)
            .map(|(c, &rank)| ClusterAccount {
                patches: c.positions.len(),
                rank,
                effective_patches: c.overlap.effective_patches(),
            })
            .collect()
    }

    pub fn cf_overall_eff_at(&self, alpha: f64) -> Result<f64> {
        Ok(cf_overall_eff(
            &self.accounts_for(&self.ranks_for(alpha)?),
            self.patch_size,
        ))
    }

    /// Largest α whose effective CF still reaches `cf_target`.
    ///
    /// CF is non-increasing in α, so this is a bisection. When even rank 1
    /// everywhere falls short of the target, the smallest α tried is
    /// returned, which yields exactly that all-rank-1 configuration.
    pub fn alpha_for_cf(&self, cf_target: f64) -> Result<f64> {
        const FLOOR: f64 = 1e-12;
        if self.cf_overall_eff_at(1.0)? >= cf_target {
            return Ok(1.0);
        }
        if self.cf_overall_eff_at(FLOOR)? < cf_target {
            return Ok(FLOOR);
        }
        let (mut lo, mut hi) = (FLOOR, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.cf_overall_eff_at(mid)? >= cf_target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }

    pub fn compress(&self, alpha: f64) -> Result<CompressedImage> {
        let clusters = self
            .clusters
            .iter()
            .map(|c| {
                Ok(CompressedCluster {
                    factors: truncate_for_energy(&c.svd, alpha)?,
                    positions: c.positions.clone(),
                    overlap: c.overlap,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CompressedImage {
            shape: self.shape,
            patch_size: self.patch_size,
            stride: self.stride,
            max_value: MAX_8BIT,
            clusters,
        })
    }
}

/// Cluster-based compression: patches → k-means → per-cluster truncated SVD.
pub fn compress_clustered(
    image: ArrayView2<'_, f64>,
    params: &ClusterParams,
) -> Result<(CompressedImage, CompressionReport)> {
    let start = Instant::now();
    let decomposition = ClusteredDecomposition::analyse(image, params)?;
    let archive = decomposition.compress(params.alpha)?;
    let report = cluster_report(&archive, decomposition.kmeans_iterations, start);
    Ok((archive, report))
}

pub(crate) fn cluster_report(archive: &CompressedImage, iterations: usize, start: Instant) -> CompressionReport {
    let per_cluster: Vec<(usize, usize)> = archive.clusters.iter().map(|c| (c.len(), c.rank())).collect();
    CompressionReport {
        method: Method::Cluster,
        cf_nominal: archive.cf_overall(),
        cf_effective: archive.cf_overall_eff(),
        ranks: archive.ranks(),
        rank_clamped: false,
        stored_elements: archive.element_count(),
        clusters: archive
            .clusters
            .iter()
            .map(|c| ClusterSummary {
                patches: c.len(),
                rank: c.rank(),
                beta: c.beta(),
                effective_patches: c.effective_patches(),
                cf: cf_cluster(archive.patch_size, c.len(), c.rank()),
                cf_eff: cf_cluster_eff(archive.patch_size, c.effective_patches(), c.len(), c.rank()),
            })
            .collect(),
        kmeans_iterations: Some(iterations),
        cost: Some(estimate_cost(
            iterations,
            archive.clusters.len(),
            archive.patch_count(),
            archive.patch_size,
            &per_cluster,
        )),
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

/// Abstract operation counts of the cluster pipeline.
///
/// Patch extraction and reassembly are omitted (`overhead` is always 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEstimate {
    /// `T·K·N·p²`.
    pub kmeans: u64,
    /// `p²·Σ_k N_k r_k`.
    pub svd: u64,
    pub overhead: u64,
    pub total: u64,
    /// `p²·max_k N_k r_k`, the SVD term when every cluster has its own worker.
    pub svd_parallel: u64,
}

impl CostEstimate {
    /// Total when k-means is spread over `processors` workers and each
    /// cluster's SVD runs on its own.
    pub fn parallel_total(&self, processors: u64) -> u64 {
        self.kmeans.div_ceil(processors.max(1)) + self.svd_parallel + self.overhead
    }
}

pub fn estimate_cost(
    iterations: usize,
    clusters: usize,
    patches: usize,
    patch_size: usize,
    per_cluster: &[(usize, usize)],
) -> CostEstimate {
    let area = (patch_size * patch_size) as u64;
    let kmeans = iterations as u64 * clusters as u64 * patches as u64 * area;
    let svd = area * per_cluster.iter().map(|&(n, r)| (n * r) as u64).sum::<u64>();
    let svd_parallel = area * per_cluster.iter().map(|&(n, r)| (n * r) as u64).max().unwrap_or(0);
    CostEstimate {
        kmeans,
        svd,
        overhead: 0,
        total: kmeans + svd,
        svd_parallel,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};

    #[test]
    fn cf_global_examples() {
        assert_relative_eq!(cf_global(512, 512, 20), 262144.0 / 20500.0);
        assert_relative_eq!(cf_global(512, 512, 1), 262144.0 / 1025.0, epsilon = 1e-12);
        assert!(cf_global(64, 64, 64) < 1.0);
    }

    #[test]
    fn rank_for_cf_examples() {
        assert_eq!(
            rank_for_cf(512, 512, cf_global(512, 512, 20)).unwrap(),
            RankForCf {
                rank: 20,
                clamped: false
            }
        );
        // 12.7875 is the 4-decimal rounding of CF(20) and sits just below it.
        assert_eq!(rank_for_cf(512, 512, 12.7875).unwrap().rank, 21);
        assert_eq!(rank_for_cf(512, 512, 12.787).unwrap().rank, 21);
        assert_eq!(rank_for_cf(512, 512, 12.788).unwrap().rank, 20);
        assert_eq!(
            rank_for_cf(512, 512, 1e6).unwrap(),
            RankForCf {
                rank: 1,
                clamped: false
            }
        );
        assert_eq!(rank_for_cf(512, 512, 256.0).unwrap().rank, 1);
        let low = 512.0 * 512.0 / (512.0 * 1025.0);
        assert_eq!(rank_for_cf(512, 512, low).unwrap().rank, 512);
        assert_eq!(
            rank_for_cf(512, 512, 0.01).unwrap(),
            RankForCf {
                rank: 512,
                clamped: true
            }
        );
        assert!(rank_for_cf(4, 4, 0.0).is_err());
    }

    #[test]
    fn cf_overall_examples() {
        let one = [ClusterAccount {
            patches: 4,
            rank: 1,
            effective_patches: 3,
        }];
        assert_relative_eq!(cf_overall(&one, 2, 4), 16.0 / 9.0);
        assert_relative_eq!(cf_overall_eff(&one, 2), 12.0 / 9.0);
        let two = [
            ClusterAccount {
                patches: 4,
                rank: 1,
                effective_patches: 4,
            },
            ClusterAccount {
                patches: 4,
                rank: 2,
                effective_patches: 4,
            },
        ];
        assert_relative_eq!(cf_overall(&two, 2, 8), 32.0 / 27.0);
        assert_eq!(cf_overall_eff(&two, 2), cf_overall(&two, 2, 8));
        let full = [ClusterAccount {
            patches: 16,
            rank: 16,
            effective_patches: 16,
        }];
        assert!(cf_overall(&full, 4, 16) < 1.0);
    }

    #[test]
    fn cf_threshold_examples() {
        assert_relative_eq!(cf_threshold(10.0, 9.0), 0.1);
        assert_eq!(cf_threshold(7.0, 7.0), 0.0);
        assert!(cf_threshold(10.0, 8.6) < 0.15);
        assert!(cf_threshold(10.0, 8.4) > 0.15);
    }

    #[test]
    fn global_matching() {
        let exact = match_global_rank(512, 512, cf_global(512, 512, 20), 0.15).unwrap();
        assert_eq!((exact.rank, exact.threshold, exact.matched), (20, 0.0, true));

        let miss = match_global_rank(4, 4, 100.0, 0.15).unwrap();
        assert_eq!(miss.rank, 1);
        assert_relative_eq!(miss.cf, 16.0 / 9.0);
        assert!(!miss.matched);
        assert!((miss.threshold - 0.982).abs() < 1e-3);

        assert!(match_global_rank(4, 4, 100.0, f64::INFINITY).unwrap().matched);
        assert!(match_global_rank(4, 4, 1.0, -0.1).is_err());
    }

    #[test]
    fn cost_examples() {
        assert_eq!(estimate_cost(10, 4, 1000, 8, &[]).kmeans, 2_560_000);
        let c = estimate_cost(0, 4, 1000, 8, &[(100, 5)]);
        assert_eq!((c.kmeans, c.svd, c.total), (0, 32_000, 32_000));
        let c = estimate_cost(2, 2, 10, 2, &[(6, 1), (4, 3)]);
        assert_eq!(c.svd_parallel, 48);
        assert_eq!(c.parallel_total(4), 40 + 48);
    }

    #[test]
    fn cluster_of_identical_patches_is_rank_one() {
        let row = array![1.0, 2.0, 3.0, 4.0];
        let m = Array2::from_shape_fn((5, 4), |(_, j)| row[j]);
        let f = compress_cluster(m.view(), 0.95).unwrap();
        assert_eq!(f.rank(), 1);
        let err = (&f.reconstruct() - &m).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(err < 1e-12);
    }

    #[test]
    fn cluster_energy_rank() {
        // Orthogonal directions with energies 100 and 1.
        let m = array![[10.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]];
        assert_eq!(compress_cluster(m.view(), 0.95).unwrap().rank(), 1);
        assert_eq!(compress_cluster(m.view(), 1.0).unwrap().rank(), 2);
    }

    #[test]
    fn global_rank_one_image_is_exact() {
        let u = array![1.0, 2.0, 3.0, 4.0, 5.0];
        let v = array![2.0, 0.5, 1.0, 3.0];
        let img = Array2::from_shape_fn((5, 4), |(i, j)| u[i] * v[j]);
        let (f, report) = compress_global(img.view(), 1).unwrap();
        let err = (&f.reconstruct() - &img).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(err < 1e-12);
        assert_relative_eq!(report.cf_nominal, cf_global(5, 4, 1));
        assert!(compress_global(img.view(), 5).is_err());
    }

    #[test]
    fn constant_image_collapses_to_rank_one() {
        let img = Array2::from_elem((24, 20), 93.0);
        let (archive, report) = compress_clustered(
            img.view(),
            &ClusterParams {
                clusters: 3,
                ..ClusterParams::new(4)
            },
        )
        .unwrap();
        assert!(archive.ranks().iter().all(|&r| r == 1));
        assert_eq!(report.ranks, archive.ranks());
        let out = archive.decompress().unwrap();
        let err = (&out - &img).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(err < 1e-9);
    }
}
