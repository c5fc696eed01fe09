//! Result tables: per-fold rows for the model and both baselines, fold
//! averages, and the composed-error row. Column order is
//! (Neck, Head, Jaw, Avg) × (MPJPE, MPVE), all in millimeters.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::Metrics;
use crate::error::{Error, Result};
use crate::kinematics::{compose_error, JointErrors};

pub const COLUMNS: [&str; 8] = [
    "neck_mpjpe",
    "neck_mpve",
    "head_mpjpe",
    "head_mpve",
    "jaw_mpjpe",
    "jaw_mpve",
    "avg_mpjpe",
    "avg_mpve",
];

pub const MODEL: &str = "imp2head";
pub const MIDPOINT: &str = "midpoint";
pub const LAST_FRAME_LINEAR: &str = "last_frame_linear";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub test_person: u32,
    pub validation_person: Option<u32>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub model: Metrics,
    pub midpoint: Metrics,
    pub last_frame_linear: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub fingerprint: String,
    pub reference_error_mm: f64,
    pub folds: Vec<FoldResult>,
}

/// One printed line of the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    /// `person_<id>`, `average` or `composed`.
    pub row: String,
    pub predictor: String,
    pub values: [f64; 8],
}

/// The table as emitted, with values rounded to 0.1 mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub seed: u64,
    pub fingerprint: String,
    pub reference_error_mm: f64,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

fn cells(m: &Metrics) -> [f64; 8] {
    let pair = |e: &JointErrors, j: usize| if j < 3 { e.per_joint[j] } else { e.joint_average() };
    std::array::from_fn(|i| {
        let j = i / 2;
        if i % 2 == 0 {
            pair(&m.mpjpe, j)
        } else {
            pair(&m.mpve, j)
        }
    })
}

fn round1(v: f64) -> f64 {
    let r = (v * 10.0).round() / 10.0;
    // Avoid printing "-0.0".
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

impl Report {
    fn predictors(f: &FoldResult) -> [(&'static str, &Metrics); 3] {
        [
            (MODEL, &f.model),
            (MIDPOINT, &f.midpoint),
            (LAST_FRAME_LINEAR, &f.last_frame_linear),
        ]
    }

    /// Unweighted mean over folds of each cell, per predictor.
    pub fn averages(&self) -> Result<Vec<(&'static str, [f64; 8])>> {
        if self.folds.is_empty() {
            return Err(Error::InvalidInput("report has no folds".into()));
        }
        let n = self.folds.len() as f64;
        Ok((0..3)
            .map(|k| {
                let name = Self::predictors(&self.folds[0])[k].0;
                let mut acc = [0.0; 8];
                for f in &self.folds {
                    let c = cells(Self::predictors(f)[k].1);
                    acc.iter_mut().zip(c).for_each(|(a, v)| *a += v / n);
                }
                (name, acc)
            })
            .collect())
    }

    /// Every model cell of the average row composed with the reference
    /// error in quadrature.
    pub fn composed(&self) -> Result<[f64; 8]> {
        let avg = self.averages()?[0].1;
        let mut out = [0.0; 8];
        for (o, v) in out.iter_mut().zip(avg) {
            *o = compose_error(self.reference_error_mm, v)?;
        }
        Ok(out)
    }

    pub fn table(&self) -> Result<ReportTable> {
        let mut rows = Vec::new();
        for f in &self.folds {
            for (name, m) in Self::predictors(f) {
                rows.push(Row {
                    row: format!("person_{}", f.test_person),
                    predictor: name.into(),
                    values: cells(m).map(round1),
                });
            }
        }
        for (name, v) in self.averages()? {
            rows.push(Row {
                row: "average".into(),
                predictor: name.into(),
                values: v.map(round1),
            });
        }
        rows.push(Row {
            row: "composed".into(),
            predictor: MODEL.into(),
            values: self.composed()?.map(round1),
        });
        Ok(ReportTable {
            seed: self.seed,
            fingerprint: self.fingerprint.clone(),
            reference_error_mm: self.reference_error_mm,
            columns: COLUMNS.iter().map(|s| s.to_string()).collect(),
            rows,
        })
    }
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "# seed={} fingerprint={} reference_error_mm={:.1}",
            self.seed, self.fingerprint, self.reference_error_mm
        )
        .unwrap();
        writeln!(s, "row,predictor,{}", self.columns.join(",")).unwrap();
        for r in &self.rows {
            let vals: Vec<String> = r.values.iter().map(|v| format!("{v:.1}")).collect();
            writeln!(s, "{},{},{}", r.row, r.predictor, vals.join(",")).unwrap();
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("report: {e}")))
    }

    /// Fixed-width text rendering for terminals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        write!(s, "{:<12} {:<18}", "row", "predictor").unwrap();
        for c in &self.columns {
            write!(s, " {c:>10}").unwrap();
        }
        s.push('\n');
        for r in &self.rows {
            write!(s, "{:<12} {:<18}", r.row, r.predictor).unwrap();
            for v in r.values {
                write!(s, " {v:>10.1}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

pub fn emit_report(table: &ReportTable, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => table.to_csv(),
        ReportFormat::Json => table.to_json()?,
    };
    std::fs::write(path, text)?;
    Ok(())
}
