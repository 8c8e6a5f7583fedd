//! Visibility-map error metrics in percent: L1, its positive and negative
//! parts, and L2 (root mean square), with pixel-pooled aggregation.

use std::fmt::Write as _;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lidar_image::VisibilityMap;
use crate::raster::quantize;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction is {0}x{1}, ground truth is {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error("invalid metric values: {0}")]
    InvalidValues(String),
}

/// Error sums over a set of pixels. Percentages are derived on demand, so
/// merging two reports equals evaluating the union of their pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    /// Σ max(A − B, 0)
    pub sum_pos: f64,
    /// Σ max(B − A, 0)
    pub sum_neg: f64,
    /// Σ (A − B)²
    pub sum_sq: f64,
    pub pixel_count: u64,
    pub pair_count: u64,
}

impl MetricsReport {
    /// Report with the given percentages over `pixel_count` pixels. Used to
    /// feed published aggregate figures through [`aggregate`].
    pub fn from_percentages(l1_pos: f64, l1_neg: f64, l2: f64, pixel_count: u64) -> Result<Self, MetricsError> {
        let ok = |v: f64| (0.0..=100.0).contains(&v);
        if !(ok(l1_pos) && ok(l1_neg) && ok(l2)) || pixel_count == 0 {
            return Err(MetricsError::InvalidValues(format!(
                "l1_pos {l1_pos}, l1_neg {l1_neg}, l2 {l2}, pixels {pixel_count}"
            )));
        }
        let n = pixel_count as f64;
        Ok(Self {
            sum_pos: l1_pos / 100.0 * n,
            sum_neg: l1_neg / 100.0 * n,
            sum_sq: (l2 / 100.0).powi(2) * n,
            pixel_count,
            pair_count: 1,
        })
    }

    fn percent(&self, sum: f64) -> f64 {
        if self.pixel_count == 0 {
            0.0
        } else {
            100.0 * sum / self.pixel_count as f64
        }
    }

    pub fn l1(&self) -> f64 {
        self.percent(self.sum_pos + self.sum_neg)
    }

    pub fn l1_pos(&self) -> f64 {
        self.percent(self.sum_pos)
    }

    pub fn l1_neg(&self) -> f64 {
        self.percent(self.sum_neg)
    }

    pub fn l2(&self) -> f64 {
        if self.pixel_count == 0 {
            0.0
        } else {
            100.0 * (self.sum_sq / self.pixel_count as f64).sqrt()
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            sum_pos: self.sum_pos + other.sum_pos,
            sum_neg: self.sum_neg + other.sum_neg,
            sum_sq: self.sum_sq + other.sum_sq,
            pixel_count: self.pixel_count + other.pixel_count,
            pair_count: self.pair_count + other.pair_count,
        }
    }

    pub fn summary(&self) -> MetricsSummary {
        MetricsSummary {
            l1: self.l1(),
            l1_pos: self.l1_pos(),
            l1_neg: self.l1_neg(),
            l2: self.l2(),
            pixel_count: self.pixel_count,
            pair_count: self.pair_count,
        }
    }
}

/// Percentages of a [`MetricsReport`], as written to JSON.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub l1: f64,
    pub l1_pos: f64,
    pub l1_neg: f64,
    pub l2: f64,
    pub pixel_count: u64,
    pub pair_count: u64,
}

fn check_dims(a: &VisibilityMap, b: &VisibilityMap) -> Result<(), MetricsError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(MetricsError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// Errors of prediction `a` against ground truth `b` over the whole image.
pub fn evaluate_pair(a: &VisibilityMap, b: &VisibilityMap) -> Result<MetricsReport, MetricsError> {
    check_dims(a, b)?;
    let mut r = MetricsReport {
        pixel_count: a.values().len() as u64,
        pair_count: 1,
        ..MetricsReport::default()
    };
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let d = f64::from(x) - f64::from(y);
        if d > 0.0 {
            r.sum_pos += d;
        } else {
            r.sum_neg -= d;
        }
        r.sum_sq += d * d;
    }
    Ok(r)
}

/// Pixel-weighted pooling of reports.
pub fn aggregate(reports: &[MetricsReport]) -> Result<MetricsReport, MetricsError> {
    let (first, rest) = reports.split_first().ok_or(MetricsError::EmptyInput)?;
    Ok(rest.iter().fold(*first, |acc, r| acc.merge(r)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(format!("unknown table format {other:?}")),
        }
    }
}

/// One row per label with L1, L1⁺, L1⁻ and L2 to two decimals.
pub fn emit_table(rows: &[(String, MetricsReport)], format: TableFormat) -> String {
    let cells = |r: &MetricsReport| [r.l1(), r.l1_pos(), r.l1_neg(), r.l2()].map(|v| format!("{v:.2}"));
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["label", "l1", "l1_pos", "l1_neg", "l2"]).expect("in-memory write");
            for (label, r) in rows {
                let c = cells(r);
                w.write_record(std::iter::once(label.as_str()).chain(c.iter().map(String::as_str)))
                    .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
        }
        TableFormat::Markdown => {
            let mut out = String::from("| Data | L1 | L1⁺ | L1⁻ | L2 |\n|---|---:|---:|---:|---:|\n");
            for (label, r) in rows {
                let [a, b, c, d] = cells(r);
                let label = label.replace('|', "\\|");
                writeln!(out, "| {label} | {a} | {b} | {c} | {d} |").expect("string write");
            }
            out
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    #[serde(flatten)]
    pub metrics: MetricsSummary,
}

/// Per-pair JSON dump.
pub fn pairs_to_json(pairs: &[(String, MetricsReport)]) -> String {
    let records: Vec<PairRecord> = pairs
        .iter()
        .map(|(id, r)| PairRecord {
            id: id.clone(),
            metrics: r.summary(),
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("plain data serializes")
}

/// Prediction in red, ground truth in green; agreement shows as yellow.
pub fn overlay(prediction: &VisibilityMap, truth: &VisibilityMap) -> Result<RgbImage, MetricsError> {
    check_dims(prediction, truth)?;
    Ok(RgbImage::from_fn(prediction.width, prediction.height, |x, y| {
        image::Rgb([quantize(prediction.get(x, y)), quantize(truth.get(x, y)), 0])
    }))
}
