//! Per-case metric rows, cohort summaries and cumulative histograms.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::voxgrid::MaskVolume;

use super::metrics::{asd, dice_score, hausdorff, hausdorff95};

#[derive(Debug, Clone, PartialEq)]
pub enum CaseStatus {
    Ok,
    /// Metrics undefined (e.g. empty prediction); excluded from means.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseMetrics {
    pub case_id: String,
    pub dice: f64,
    pub hd_mm: f64,
    pub hd95_mm: f64,
    pub asd_mm: f64,
    pub status: CaseStatus,
}

impl CaseMetrics {
    /// Scores a prediction against the reference. Undefined surface metrics
    /// mark the row failed instead of erroring.
    pub fn score(case_id: impl Into<String>, pred: &MaskVolume, truth: &MaskVolume) -> Result<Self> {
        let case_id = case_id.into();
        let dice = dice_score(pred, truth)?;
        let surf = hausdorff(pred, truth).and_then(|hd| Ok((hd, hausdorff95(pred, truth)?, asd(pred, truth)?)));
        Ok(match surf {
            Ok((hd_mm, hd95_mm, asd_mm)) => Self {
                case_id,
                dice,
                hd_mm,
                hd95_mm,
                asd_mm,
                status: CaseStatus::Ok,
            },
            Err(Error::UndefinedHd) | Err(Error::UndefinedSurfaceDistance) => Self {
                case_id,
                dice,
                hd_mm: f64::NAN,
                hd95_mm: f64::NAN,
                asd_mm: f64::NAN,
                status: CaseStatus::Failed("empty mask".into()),
            },
            Err(e) => return Err(e),
        })
    }

    pub fn is_ok(&self) -> bool {
        self.status == CaseStatus::Ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistMetric {
    /// Fraction of cases with Dice at or above each threshold.
    Dice,
    /// Fraction of cases with ASD at or below each threshold.
    Asd,
}

impl HistMetric {
    pub fn name(self) -> &'static str {
        match self {
            HistMetric::Dice => "dice",
            HistMetric::Asd => "asd",
        }
    }

    pub fn default_thresholds(self) -> Vec<f64> {
        match self {
            HistMetric::Dice => (0..=20).map(|i| i as f64 * 0.05).collect(),
            HistMetric::Asd => (0..=40).map(|i| i as f64 * 0.5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistTable {
    pub metric: HistMetric,
    pub rows: Vec<(f64, f64)>,
}

pub fn cumulative_histogram(rows: &[CaseMetrics], metric: HistMetric, thresholds: &[f64]) -> Result<HistTable> {
    let values: Vec<f64> = rows
        .iter()
        .filter(|r| r.is_ok())
        .map(|r| match metric {
            HistMetric::Dice => r.dice,
            HistMetric::Asd => r.asd_mm,
        })
        .collect();
    if values.is_empty() {
        return Err(Error::EmptyRows);
    }
    let n = values.len() as f64;
    let rows = thresholds
        .iter()
        .map(|&t| {
            let hits = values
                .iter()
                .filter(|&&v| match metric {
                    HistMetric::Dice => v >= t,
                    HistMetric::Asd => v <= t,
                })
                .count();
            (t, hits as f64 / n)
        })
        .collect();
    Ok(HistTable { metric, rows })
}

impl HistTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fraction\n");
        for (t, f) in &self.rows {
            let _ = writeln!(s, "{t:.4},{f:.6}");
        }
        s
    }

    pub fn fraction_at(&self, threshold: f64) -> Option<f64> {
        self.rows.iter().find(|(t, _)| (t - threshold).abs() < 1e-9).map(|&(_, f)| f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<CaseMetrics>,
}

impl MetricsReport {
    pub fn new(rows: Vec<CaseMetrics>) -> Self {
        Self { rows }
    }

    fn ok_values(&self, f: impl Fn(&CaseMetrics) -> f64) -> Vec<f64> {
        self.rows.iter().filter(|r| r.is_ok()).map(f).collect()
    }

    pub fn dice(&self) -> MeanStd {
        MeanStd::of(&self.ok_values(|r| r.dice))
    }

    pub fn hd(&self) -> MeanStd {
        MeanStd::of(&self.ok_values(|r| r.hd_mm))
    }

    pub fn hd95(&self) -> MeanStd {
        MeanStd::of(&self.ok_values(|r| r.hd95_mm))
    }

    pub fn asd(&self) -> MeanStd {
        MeanStd::of(&self.ok_values(|r| r.asd_mm))
    }

    pub fn failed_count(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }

    /// Per-case rows followed by `MEAN` and `STD` summary rows. The summary
    /// `status` column carries the number of failed cases.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("case_id,dice,hd_mm,hd95_mm,asd_mm,status\n");
        for r in &self.rows {
            let status = match &r.status {
                CaseStatus::Ok => "OK".to_string(),
                CaseStatus::Failed(why) => format!("FAILED:{why}"),
            };
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{}",
                r.case_id, r.dice, r.hd_mm, r.hd95_mm, r.asd_mm, status
            );
        }
        let (d, h, h95, a) = (self.dice(), self.hd(), self.hd95(), self.asd());
        let failed = self.failed_count();
        let _ = writeln!(s, "MEAN,{:.6},{:.6},{:.6},{:.6},failed={failed}", d.mean, h.mean, h95.mean, a.mean);
        let _ = writeln!(s, "STD,{:.6},{:.6},{:.6},{:.6},failed={failed}", d.std, h.std, h95.std, a.std);
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
