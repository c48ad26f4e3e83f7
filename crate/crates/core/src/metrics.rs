//! Region-restricted image quality metrics.
//!
//! Every metric is evaluated over the pixels selected by a [`RegionMask`].
//! SSIM uses a single set of region statistics by default; a sliding-window
//! mean SSIM is available for comparison with conventional implementations.

use ndarray::{Array2, ArrayView2, Zip};

use crate::report::{Region, RegionMetrics};
use crate::{Error, Result};

/// Binary pixel selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    mask: Array2<bool>,
}

impl RegionMask {
    pub fn new(mask: Array2<bool>) -> Self {
        Self { mask }
    }

    pub fn full(shape: (usize, usize)) -> Self {
        Self::new(Array2::from_elem(shape, true))
    }

    /// Pixels of `image` strictly above `threshold`.
    pub fn above(image: ArrayView2<'_, f64>, threshold: f64) -> Self {
        Self::new(image.mapv(|v| v > threshold))
    }

    pub fn complement(&self) -> Self {
        Self::new(self.mask.mapv(|v| !v))
    }

    pub fn intersect(&self, other: &Self) -> Self {
        Self::new(Zip::from(&self.mask).and(&other.mask).map_collect(|&a, &b| a && b))
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&v| v).count()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn as_array(&self) -> &Array2<bool> {
        &self.mask
    }
}

fn check_shapes(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, mask: &RegionMask) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(a.dim(), b.dim()));
    }
    if a.dim() != mask.shape() {
        return Err(Error::ShapeMismatch(a.dim(), mask.shape()));
    }
    Ok(())
}

fn pairs(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, mask: &RegionMask) -> Vec<(f64, f64)> {
    mask.mask
        .iter()
        .zip(a.iter().zip(b.iter()))
        .filter(|(m, _)| **m)
        .map(|(_, (x, y))| (*x, *y))
        .collect()
}

/// Mean squared difference over the region.
pub fn mse(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, mask: &RegionMask) -> Result<f64> {
    check_shapes(a, b, mask)?;
    let count = mask.count();
    if count == 0 {
        return Err(Error::EmptyRegion(0));
    }
    let sum: f64 = pairs(a, b, mask).into_iter().map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / count as f64)
}

/// `10·log10(MAX² / MSE)`; `+∞` when the MSE is zero.
pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_value * max_value / mse).log10()
    }
}

pub fn psnr(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, mask: &RegionMask, max_value: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b, mask)?, max_value))
}

/// SSIM stabilisers `C1 = (0.01·MAX)²`, `C2 = (0.03·MAX)²`.
pub fn ssim_constants(max_value: f64) -> (f64, f64) {
    ((0.01 * max_value).powi(2), (0.03 * max_value).powi(2))
}

fn ssim_from_pairs(values: &[(f64, f64)], max_value: f64) -> f64 {
    let n = values.len() as f64;
    let (sa, sb) = values.iter().fold((0.0, 0.0), |(sa, sb), (x, y)| (sa + x, sb + y));
    let (mu_a, mu_b) = (sa / n, sb / n);
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for &(x, y) in values {
        let (dx, dy) = (x - mu_a, y - mu_b);
        var_a += dx * dx;
        var_b += dy * dy;
        cov += dx * dy;
    }
    var_a /= n;
    var_b /= n;
    cov /= n;
    let (c1, c2) = ssim_constants(max_value);
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

/// Single-window SSIM from the region's means, variances and covariance.
pub fn ssim(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, mask: &RegionMask, max_value: f64) -> Result<f64> {
    check_shapes(a, b, mask)?;
    let count = mask.count();
    if count < 2 {
        return Err(Error::EmptyRegion(count));
    }
    Ok(ssim_from_pairs(&pairs(a, b, mask), max_value))
}

/// Mean SSIM over all `window × window` blocks lying inside the image whose
/// centre pixel belongs to the region.
pub fn ssim_windowed(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    mask: &RegionMask,
    max_value: f64,
    window: usize,
) -> Result<f64> {
    check_shapes(a, b, mask)?;
    let (rows, cols) = a.dim();
    if window < 2 || window > rows.min(cols) {
        return Err(Error::InvalidInput(format!(
            "SSIM window {window} does not fit {rows}x{cols}"
        )));
    }
    let half = window / 2;
    let (mut total, mut windows) = (0.0, 0usize);
    for r in 0..=rows - window {
        for c in 0..=cols - window {
            if !mask.mask[[r + half, c + half]] {
                continue;
            }
            let wa = a.slice(ndarray::s![r..r + window, c..c + window]);
            let wb = b.slice(ndarray::s![r..r + window, c..c + window]);
            let values: Vec<(f64, f64)> = wa.iter().copied().zip(wb.iter().copied()).collect();
            total += ssim_from_pairs(&values, max_value);
            windows += 1;
        }
    }
    if windows == 0 {
        return Err(Error::EmptyRegion(0));
    }
    Ok(total / windows as f64)
}

/// `|Ω ∩ Ω̂| / |Ω ∪ Ω̂|`.
pub fn iou(first: &RegionMask, second: &RegionMask) -> Result<f64> {
    if first.shape() != second.shape() {
        return Err(Error::ShapeMismatch(first.shape(), second.shape()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in first.mask.iter().zip(second.mask.iter()) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        return Err(Error::UndefinedIoU);
    }
    Ok(inter as f64 / union as f64)
}

/// Otsu's threshold over integer intensity bins `0..=max_value`.
///
/// Pixels strictly above the returned value form the foreground class.
pub fn otsu_threshold(image: ArrayView2<'_, f64>, max_value: u32) -> f64 {
    let bins = max_value as usize + 1;
    let mut hist = vec![0u64; bins];
    for &v in image.iter() {
        let b = v.round().clamp(0.0, f64::from(max_value)) as usize;
        hist[b] += 1;
    }
    let total = image.len() as f64;
    let weighted: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0usize);
    for (t, &h) in hist.iter().enumerate() {
        w0 += h as f64;
        sum0 += t as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (weighted - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t;
        }
    }
    best_t as f64
}

/// `‖A_Ω − Â_Ω‖_F / ‖A_Ω‖_F`.
pub fn relative_error(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, mask: &RegionMask) -> Result<f64> {
    check_shapes(a, b, mask)?;
    let (mut diff, mut norm) = (0.0, 0.0);
    for (x, y) in pairs(a, b, mask) {
        diff += (x - y) * (x - y);
        norm += x * x;
    }
    if norm == 0.0 {
        return Err(Error::DegenerateRegion("reference has zero norm over the region"));
    }
    Ok((diff / norm).sqrt())
}

/// Sobel responses and gradient magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub gx: Array2<f64>,
    pub gy: Array2<f64>,
    pub magnitude: Array2<f64>,
}

/// 3×3 Sobel gradients with replicated borders.
///
/// `gx` responds to change along columns (`[-1 0 1; -2 0 2; -1 0 1]`), `gy`
/// to change along rows.
pub fn sobel(image: ArrayView2<'_, f64>) -> Result<GradientField> {
    let (rows, cols) = image.dim();
    if rows < 3 || cols < 3 {
        return Err(Error::ImageTooSmall { rows, cols });
    }
    let at = |i: isize, j: isize| {
        let r = i.clamp(0, rows as isize - 1) as usize;
        let c = j.clamp(0, cols as isize - 1) as usize;
        image[[r, c]]
    };
    let mut gx = Array2::<f64>::zeros((rows, cols));
    let mut gy = Array2::<f64>::zeros((rows, cols));
    for i in 0..rows as isize {
        for j in 0..cols as isize {
            let x = (at(i - 1, j + 1) + 2.0 * at(i, j + 1) + at(i + 1, j + 1))
                - (at(i - 1, j - 1) + 2.0 * at(i, j - 1) + at(i + 1, j - 1));
            let y = (at(i + 1, j - 1) + 2.0 * at(i + 1, j) + at(i + 1, j + 1))
                - (at(i - 1, j - 1) + 2.0 * at(i - 1, j) + at(i - 1, j + 1));
            gx[[i as usize, j as usize]] = x;
            gy[[i as usize, j as usize]] = y;
        }
    }
    let magnitude = Zip::from(&gx).and(&gy).map_collect(|&x, &y| x.hypot(y));
    Ok(GradientField { gx, gy, magnitude })
}

/// Edge preservation index, `1 − Σ_Ω |S_A − S_Â| / Σ_Ω S_A`.
///
/// Pixels on the outermost image border are left out of both sums because
/// their gradients come from replicated padding.
pub fn epi(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, mask: &RegionMask) -> Result<f64> {
    check_shapes(a, b, mask)?;
    let sa = sobel(a)?.magnitude;
    let sb = sobel(b)?.magnitude;
    let (rows, cols) = a.dim();
    let (mut num, mut den) = (0.0, 0.0);
    for ((i, j), &x) in sa.indexed_iter() {
        if !mask.mask[[i, j]] || i == 0 || j == 0 || i + 1 == rows || j + 1 == cols {
            continue;
        }
        num += (x - sb[[i, j]]).abs();
        den += x.abs();
    }
    if den == 0.0 {
        return Err(Error::DegenerateRegion("reference has no edges in the region"));
    }
    Ok(1.0 - num / den)
}

/// Settings shared by every region evaluated in a comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSettings {
    pub max_value: f64,
    /// Intensity above which a pixel counts as foreground for IoU.
    pub iou_threshold: f64,
    /// Use a sliding-window mean SSIM of this size instead of one window.
    pub ssim_window: Option<usize>,
}

/// Every metric over one region; metrics undefined on the region are `None`.
pub fn region_metrics(
    original: ArrayView2<'_, f64>,
    reconstructed: ArrayView2<'_, f64>,
    mask: &RegionMask,
    region: Region,
    settings: &MetricSettings,
) -> Result<RegionMetrics> {
    check_shapes(original, reconstructed, mask)?;
    let ok = |r: Result<f64>| -> Result<Option<f64>> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(
                Error::EmptyRegion(_) | Error::UndefinedIoU | Error::DegenerateRegion(_) | Error::ImageTooSmall { .. },
            ) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let mse_v = ok(mse(original, reconstructed, mask))?;
    let ssim_v = match settings.ssim_window {
        None => ok(ssim(original, reconstructed, mask, settings.max_value))?,
        Some(w) => ok(ssim_windowed(original, reconstructed, mask, settings.max_value, w))?,
    };
    let fg_a = RegionMask::above(original, settings.iou_threshold).intersect(mask);
    let fg_b = RegionMask::above(reconstructed, settings.iou_threshold).intersect(mask);
    Ok(RegionMetrics {
        region,
        pixels: mask.count(),
        mse: mse_v,
        psnr: mse_v.map(|m| psnr_from_mse(m, settings.max_value)),
        ssim: ssim_v,
        iou: ok(iou(&fg_a, &fg_b))?,
        rel_err: ok(relative_error(original, reconstructed, mask))?,
        epi: ok(epi(original, reconstructed, mask))?,
    })
}
