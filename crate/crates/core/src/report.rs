//! Plain-data reports emitted by the pipeline and the commands.

use serde::{Deserialize, Serialize};

use crate::pipeline::CostEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Global,
    Cluster,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Global => "global",
            Method::Cluster => "cluster",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub patches: usize,
    pub rank: usize,
    pub beta: f64,
    pub effective_patches: usize,
    pub cf: f64,
    pub cf_eff: f64,
}

/// Compression factors, ranks and timing of one compression run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub method: Method,
    /// `CF_global` or `CF_overall`.
    pub cf_nominal: f64,
    /// Overlap-corrected CF; equal to `cf_nominal` for the global method.
    pub cf_effective: f64,
    pub ranks: Vec<usize>,
    /// Set when a requested CF mapped to a rank outside `1..=min(m, n)`.
    pub rank_clamped: bool,
    pub stored_elements: usize,
    pub clusters: Vec<ClusterSummary>,
    pub kmeans_iterations: Option<usize>,
    pub cost: Option<CostEstimate>,
    pub wall_time_s: f64,
}

/// Which pixels a metric row was computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Full,
    Roi,
    Background,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Full => "full",
            Region::Roi => "roi",
            Region::Background => "background",
        }
    }
}

/// Quality metrics over one region. A metric that is undefined for the
/// region (empty IoU union, edgeless reference, ...) is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub region: Region,
    pub pixels: usize,
    pub mse: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub iou: Option<f64>,
    pub rel_err: Option<f64>,
    pub epi: Option<f64>,
}

impl RegionMetrics {
    /// `1 − SSIM`, the dissimilarity form some tables report.
    pub fn ssim_error(&self) -> Option<f64> {
        self.ssim.map(|v| 1.0 - v)
    }

    pub fn iou_error(&self) -> Option<f64> {
        self.iou.map(|v| 1.0 - v)
    }
}

/// One line of the comparison CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: Method,
    pub cf_target: f64,
    pub cf_achieved: f64,
    pub matched: bool,
    pub region: Region,
    pub mse: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub iou: Option<f64>,
    pub rel_err: Option<f64>,
    pub epi: Option<f64>,
}

pub const COMPARE_COLUMNS: [&str; 11] = [
    "method",
    "cf_target",
    "cf_achieved",
    "matched",
    "region",
    "mse",
    "psnr",
    "ssim",
    "iou",
    "rel_err",
    "epi",
];

impl CompareRow {
    pub fn new(method: Method, cf_target: f64, cf_achieved: f64, matched: bool, m: &RegionMetrics) -> Self {
        Self {
            method,
            cf_target,
            cf_achieved,
            matched,
            region: m.region,
            mse: m.mse,
            psnr: m.psnr,
            ssim: m.ssim,
            iou: m.iou,
            rel_err: m.rel_err,
            epi: m.epi,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x == f64::INFINITY => "inf".to_owned(),
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Write rows under the fixed comparison column schema.
pub fn write_compare_csv<W: std::io::Write>(out: W, rows: &[CompareRow]) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARE_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.method.as_str().to_owned(),
            format!("{}", r.cf_target),
            format!("{}", r.cf_achieved),
            r.matched.to_string(),
            r.region.as_str().to_owned(),
            fmt_opt(r.mse),
            fmt_opt(r.psnr),
            fmt_opt(r.ssim),
            fmt_opt(r.iou),
            fmt_opt(r.rel_err),
            fmt_opt(r.epi),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_is_fixed() {
        let m = RegionMetrics {
            region: Region::Roi,
            pixels: 4,
            mse: Some(0.0),
            psnr: Some(f64::INFINITY),
            ssim: Some(1.0),
            iou: None,
            rel_err: Some(0.0),
            epi: Some(1.0),
        };
        let mut buf = Vec::new();
        write_compare_csv(&mut buf, &[CompareRow::new(Method::Cluster, 6.0, 6.5, true, &m)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,cf_target,cf_achieved,matched,region,mse,psnr,ssim,iou,rel_err,epi"
        );
        assert_eq!(lines.next().unwrap(), "cluster,6,6.5,true,roi,0,inf,1,,0,1");
    }
}
