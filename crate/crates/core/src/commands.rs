//! The operations behind the command-line subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::archive::{self, Archive, GlobalImage};
use crate::clustering::{Init, DEFAULT_MAX_ITER};
use crate::linalg;
use crate::metrics::{self, MetricSettings, RegionMask};
use crate::pipeline::{self, ClusterParams, ClusteredDecomposition, GlobalMatch};
use crate::report::{CompareRow, CompressionReport, Method, Region, RegionMetrics};
use crate::{imageio, par, Error, ImageMatrix, Result, MAX_8BIT};

pub const DEFAULT_CF_THRESHOLD: f64 = 0.15;

/// Every knob of a run. Serialised verbatim into reports so a run can be
/// repeated bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub mask: Option<PathBuf>,
    pub method: Method,
    pub patch_size: usize,
    /// Defaults to half the patch size.
    pub stride: Option<usize>,
    pub clusters: usize,
    pub alpha: f64,
    pub seed: u64,
    pub max_iter: usize,
    pub init: Init,
    /// Global rank for `compress --method global`.
    pub rank: Option<usize>,
    /// Target compression factor; overrides `alpha` or `rank`.
    pub cf: Option<f64>,
    pub cf_targets: Vec<f64>,
    pub cf_threshold: f64,
    /// IoU foreground threshold; Otsu's threshold of the original when unset.
    pub iou_threshold: Option<f64>,
    pub ssim_window: Option<usize>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        let p = ClusterParams::default();
        Self {
            input: input.into(),
            mask: None,
            method: Method::Cluster,
            patch_size: p.patch_size,
            stride: None,
            clusters: p.clusters,
            alpha: p.alpha,
            seed: p.seed,
            max_iter: DEFAULT_MAX_ITER,
            init: Init::Random,
            rank: None,
            cf: None,
            cf_targets: Vec::new(),
            cf_threshold: DEFAULT_CF_THRESHOLD,
            iou_threshold: None,
            ssim_window: None,
            out: None,
            report: None,
            threads: None,
        }
    }

    pub fn cluster_params(&self) -> ClusterParams {
        ClusterParams {
            patch_size: self.patch_size,
            stride: self.stride.unwrap_or((self.patch_size / 2).max(1)),
            clusters: self.clusters,
            alpha: self.alpha,
            seed: self.seed,
            max_iter: self.max_iter,
            init: self.init,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 {
            return fail("patch size must be at least 1".into());
        }
        let stride = self.cluster_params().stride;
        if stride == 0 || stride > self.patch_size {
            return fail(format!("stride {stride} outside 1..={}", self.patch_size));
        }
        if self.clusters == 0 {
            return fail("at least one cluster is required".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if self.max_iter == 0 {
            return fail("max-iter must be at least 1".into());
        }
        if self.rank == Some(0) {
            return fail("rank must be at least 1".into());
        }
        for &cf in self.cf.iter().chain(&self.cf_targets) {
            if !(cf > 0.0 && cf.is_finite()) {
                return fail(format!("compression factor {cf} must be positive"));
            }
        }
        if self.cf_threshold.is_nan() || self.cf_threshold < 0.0 {
            return fail(format!("cf-threshold {} must be nonnegative", self.cf_threshold));
        }
        if self.threads == Some(0) {
            return fail("threads must be at least 1".into());
        }
        Ok(())
    }
}

/// Run `f` on a dedicated pool of `threads` workers, or on the global pool.
#[cfg(feature = "parallel")]
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<T: Send>(_threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(f())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressRun {
    pub config: RunConfig,
    /// Energy threshold actually used (differs from `config.alpha` when a CF
    /// target was given).
    pub alpha_used: Option<f64>,
    pub compression: CompressionReport,
    pub archive_bytes: usize,
    /// Raw 8-bit image bytes over archive bytes, headers included.
    pub bytes_ratio: f64,
}

/// Compress an image in memory according to `config`.
pub fn compress_image(image: &ImageMatrix, config: &RunConfig) -> Result<(Archive, CompressionReport, Option<f64>)> {
    let (rows, cols) = image.dim();
    match config.method {
        Method::Cluster => {
            let start = Instant::now();
            let params = config.cluster_params();
            let decomposition = ClusteredDecomposition::analyse(image.view(), &params)?;
            let alpha = match config.cf {
                Some(cf) => decomposition.alpha_for_cf(cf)?,
                None => params.alpha,
            };
            let compressed = decomposition.compress(alpha)?;
            let report = pipeline::cluster_report(&compressed, decomposition.kmeans_iterations, start);
            Ok((Archive::Clustered(compressed), report, Some(alpha)))
        }
        Method::Global => {
            let (rank, clamped) = match (config.rank, config.cf) {
                (_, Some(cf)) => {
                    let r = pipeline::rank_for_cf(rows, cols, cf)?;
                    (r.rank, r.clamped)
                }
                (Some(r), None) => (r, false),
                (None, None) => {
                    return Err(Error::Config("global compression needs --rank or --cf".into()));
                }
            };
            let (factors, mut report) = pipeline::compress_global(image.view(), rank)?;
            report.rank_clamped = clamped;
            let archive = Archive::Global(GlobalImage {
                shape: (rows, cols),
                max_value: MAX_8BIT,
                factors,
            });
            Ok((archive, report, None))
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

/// Read the input image, compress it, write the archive to `config.out` and
/// the JSON report to `config.report` when set.
pub fn cmd_compress(config: &RunConfig) -> Result<CompressRun> {
    config.validate()?;
    let out = config
        .out
        .as_ref()
        .ok_or_else(|| Error::Config("compress needs an output archive path".into()))?;
    let image = imageio::read_grayscale(&config.input)?;
    let (archive, compression, alpha_used) = with_threads(config.threads, || compress_image(&image, config))??;
    let bytes = archive::to_bytes(&archive)?;
    fs::write(out, &bytes)?;
    let run = CompressRun {
        config: config.clone(),
        alpha_used,
        compression,
        archive_bytes: bytes.len(),
        bytes_ratio: image.len() as f64 / bytes.len() as f64,
    };
    if let Some(path) = &config.report {
        write_json(path, &run)?;
    }
    Ok(run)
}

/// Decode an archive and export the image clamped and rounded to integer
/// intensities. Nothing is written unless decoding succeeds.
pub fn cmd_decompress(archive_path: impl AsRef<Path>, output: impl AsRef<Path>) -> Result<ImageMatrix> {
    let bytes = fs::read(archive_path)?;
    let archive = archive::from_bytes(&bytes)?;
    let image = archive.decompress()?;
    imageio::write_grayscale(output, image.view(), archive.max_value())?;
    Ok(image)
}

/// Regions to report: the whole image, plus ROI and background when a mask
/// is supplied.
pub fn regions(shape: (usize, usize), mask: Option<&RegionMask>) -> Result<Vec<(Region, RegionMask)>> {
    let mut out = vec![(Region::Full, RegionMask::full(shape))];
    if let Some(m) = mask {
        if m.shape() != shape {
            return Err(Error::ShapeMismatch(shape, m.shape()));
        }
        out.push((Region::Roi, m.clone()));
        out.push((Region::Background, m.complement()));
    }
    Ok(out)
}

fn metric_settings(original: &ImageMatrix, config: &RunConfig) -> MetricSettings {
    MetricSettings {
        max_value: f64::from(MAX_8BIT),
        iou_threshold: config
            .iou_threshold
            .unwrap_or_else(|| metrics::otsu_threshold(original.view(), MAX_8BIT)),
        ssim_window: config.ssim_window,
    }
}

fn evaluate_all(
    original: &ImageMatrix,
    reconstructed: &ImageMatrix,
    regions: &[(Region, RegionMask)],
    settings: &MetricSettings,
) -> Result<Vec<RegionMetrics>> {
    regions
        .iter()
        .map(|(region, mask)| metrics::region_metrics(original.view(), reconstructed.view(), mask, *region, settings))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub original: PathBuf,
    pub reconstructed: PathBuf,
    pub mask: Option<PathBuf>,
    pub iou_threshold: f64,
    pub ssim_window: Option<usize>,
    pub metrics: Vec<RegionMetrics>,
}

/// Metrics between an original and a reconstructed image file.
pub fn cmd_evaluate(config: &RunConfig, reconstructed: impl AsRef<Path>) -> Result<EvaluateReport> {
    let original = imageio::read_grayscale(&config.input)?;
    let recon = imageio::read_grayscale(reconstructed.as_ref())?;
    if original.dim() != recon.dim() {
        return Err(Error::ShapeMismatch(original.dim(), recon.dim()));
    }
    let mask = config.mask.as_ref().map(imageio::read_mask).transpose()?;
    let settings = metric_settings(&original, config);
    let metrics = evaluate_all(&original, &recon, &regions(original.dim(), mask.as_ref())?, &settings)?;
    let report = EvaluateReport {
        original: config.input.clone(),
        reconstructed: reconstructed.as_ref().to_path_buf(),
        mask: config.mask.clone(),
        iou_threshold: settings.iou_threshold,
        ssim_window: settings.ssim_window,
        metrics,
    };
    if let Some(path) = &config.report {
        write_json(path, &report)?;
    }
    Ok(report)
}

/// Outcome of one CF target in a comparison sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparePoint {
    pub cf_target: f64,
    pub alpha: f64,
    pub cluster_ranks: Vec<usize>,
    pub cf_overall: f64,
    pub cf_overall_eff: f64,
    pub global: GlobalMatch,
    pub cluster_metrics: Vec<RegionMetrics>,
    pub global_metrics: Vec<RegionMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub config: RunConfig,
    pub iou_threshold: f64,
    pub points: Vec<ComparePoint>,
    pub rows: Vec<CompareRow>,
}

/// Cluster-based against global SVD at matched compression factors.
///
/// For every target the cluster method runs at the largest α whose
/// effective CF reaches the target, the global rank whose CF is closest to
/// that achieved CF is chosen, and both reconstructions are scored over the
/// whole image (and ROI / background with a mask). Rows whose CFs differ by
/// more than the threshold are kept but flagged `matched = false`.
pub fn compare_images(original: &ImageMatrix, mask: Option<&RegionMask>, config: &RunConfig) -> Result<CompareReport> {
    config.validate()?;
    if config.cf_targets.is_empty() {
        return Err(Error::Config("compare needs at least one CF target".into()));
    }
    let (rows, cols) = original.dim();
    let regions = regions((rows, cols), mask)?;
    let settings = metric_settings(original, config);
    let max = f64::from(MAX_8BIT);
    let clamp = |img: ImageMatrix| img.mapv(|v| v.clamp(0.0, max));

    let decomposition = ClusteredDecomposition::analyse(original.view(), &config.cluster_params())?;
    let global_svd = linalg::svd(original.view())?;

    let points = par::try_map(&config.cf_targets, |&cf_target| {
        let alpha = decomposition.alpha_for_cf(cf_target)?;
        let compressed = decomposition.compress(alpha)?;
        let cf_eff = compressed.cf_overall_eff();
        let global = pipeline::match_global_rank(rows, cols, cf_eff, config.cf_threshold)?;
        let cluster_img = clamp(compressed.decompress()?);
        let global_img = clamp(linalg::truncate(&global_svd, global.rank)?.reconstruct());
        Ok::<_, Error>(ComparePoint {
            cf_target,
            alpha,
            cluster_ranks: compressed.ranks(),
            cf_overall: compressed.cf_overall(),
            cf_overall_eff: cf_eff,
            global,
            cluster_metrics: evaluate_all(original, &cluster_img, &regions, &settings)?,
            global_metrics: evaluate_all(original, &global_img, &regions, &settings)?,
        })
    })?;

    let mut out_rows = Vec::new();
    for p in &points {
        if !p.global.matched {
            log::warn!(
                "CF target {}: no global rank within {} of CF {:.3} (closest rank {} gives {:.3})",
                p.cf_target,
                config.cf_threshold,
                p.cf_overall_eff,
                p.global.rank,
                p.global.cf
            );
        }
        for m in &p.cluster_metrics {
            out_rows.push(CompareRow::new(
                Method::Cluster,
                p.cf_target,
                p.cf_overall_eff,
                p.global.matched,
                m,
            ));
        }
        for m in &p.global_metrics {
            out_rows.push(CompareRow::new(
                Method::Global,
                p.cf_target,
                p.global.cf,
                p.global.matched,
                m,
            ));
        }
    }
    Ok(CompareReport {
        config: config.clone(),
        iou_threshold: settings.iou_threshold,
        points,
        rows: out_rows,
    })
}

/// File-level comparison: CSV rows to `config.out`, full JSON to
/// `config.report`.
pub fn cmd_compare(config: &RunConfig) -> Result<CompareReport> {
    config.validate()?;
    let original = imageio::read_grayscale(&config.input)?;
    let mask = config.mask.as_ref().map(imageio::read_mask).transpose()?;
    let report = with_threads(config.threads, || compare_images(&original, mask.as_ref(), config))??;
    if let Some(path) = &config.out {
        crate::report::write_compare_csv(fs::File::create(path)?, &report.rows)?;
    }
    if let Some(path) = &config.report {
        write_json(path, &report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn validation_catches_bad_ranges() {
        let ok = RunConfig::new("x.png");
        assert!(ok.validate().is_ok());
        for bad in [
            RunConfig {
                alpha: 0.0,
                ..ok.clone()
            },
            RunConfig {
                stride: Some(9),
                ..ok.clone()
            },
            RunConfig {
                clusters: 0,
                ..ok.clone()
            },
            RunConfig {
                cf: Some(-1.0),
                ..ok.clone()
            },
            RunConfig {
                cf_threshold: -0.1,
                ..ok.clone()
            },
            RunConfig {
                threads: Some(0),
                ..ok.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn global_needs_rank_or_cf() {
        let img = Array2::from_elem((8, 8), 3.0);
        let config = RunConfig {
            method: Method::Global,
            ..RunConfig::new("x")
        };
        assert!(matches!(compress_image(&img, &config), Err(Error::Config(_))));
        let config = RunConfig {
            cf: Some(1e9),
            ..config
        };
        let (_, report, _) = compress_image(&img, &config).unwrap();
        assert_eq!(report.ranks, vec![1]);
        assert!(!report.rank_clamped);
        let config = RunConfig {
            cf: Some(1e-3),
            ..config
        };
        let (_, report, _) = compress_image(&img, &config).unwrap();
        assert_eq!(report.ranks, vec![8]);
        assert!(report.rank_clamped);
    }

    #[test]
    fn rank_one_image_compares_without_error() {
        let img = Array2::from_shape_fn((32, 32), |(i, j)| (1.0 + i as f64) * (2.0 + (j % 5) as f64));
        let config = RunConfig {
            patch_size: 4,
            clusters: 2,
            cf_targets: vec![0.1, 3.0],
            ..RunConfig::new("x")
        };
        let report = compare_images(&img, None, &config).unwrap();
        assert_eq!(report.rows.len(), 4);
        // Any global rank reproduces a rank-1 image; a target below every
        // attainable CF forces the lossless cluster configuration.
        assert_eq!(report.points[0].alpha, 1.0);
        for row in &report.rows {
            if row.method == Method::Global || row.cf_target < 1.0 {
                assert!(row.mse.unwrap() < 1e-18, "{row:?}");
                assert!((row.ssim.unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }
}
