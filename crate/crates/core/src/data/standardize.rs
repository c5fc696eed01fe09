//! Per-feature z-scoring with statistics taken from the training split.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::FEATURE_DIM;

/// Standard deviations at or below this are treated as zero.
pub const MIN_STD: f64 = 1e-12;

pub const MEAN_RECORD: &str = "norm.mean";
pub const STD_RECORD: &str = "norm.std";

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: [f64; FEATURE_DIM],
    pub std: [f64; FEATURE_DIM],
}

impl Standardizer {
    /// Population mean and SD per feature. Errors name the first constant
    /// feature (0-based: mag1, phase1, mag2, ...).
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64; FEATURE_DIM]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = [0.0; FEATURE_DIM];
        let mut sq = [0.0; FEATURE_DIM];
        // Two passes would need the iterator twice; shift by the first row
        // instead to keep the one-pass sums well conditioned.
        let mut shift = None;
        for r in rows {
            let s = *shift.get_or_insert(*r);
            for i in 0..FEATURE_DIM {
                let d = r[i] - s[i];
                sum[i] += d;
                sq[i] += d * d;
            }
            n += 1;
        }
        let shift = shift.ok_or_else(|| Error::InvalidInput("cannot fit statistics on no rows".into()))?;
        let nf = n as f64;
        let mut mean = [0.0; FEATURE_DIM];
        let mut std = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            let m = sum[i] / nf;
            mean[i] = shift[i] + m;
            std[i] = (sq[i] / nf - m * m).max(0.0).sqrt();
            if std[i] <= MIN_STD {
                return Err(Error::ZeroVariance { channel: i });
            }
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, row: &[f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        std::array::from_fn(|i| (row[i] - self.mean[i]) / self.std[i])
    }

    /// Standardizes a tensor whose last axis is the feature axis, in place.
    pub fn apply_tensor(&self, t: &mut Tensor) -> Result<()> {
        if t.shape().last() != Some(&FEATURE_DIM) {
            return Err(Error::InvalidInput(format!(
                "expected trailing axis {FEATURE_DIM}, got {:?}",
                t.shape()
            )));
        }
        for row in t.data_mut().chunks_mut(FEATURE_DIM) {
            for i in 0..FEATURE_DIM {
                row[i] = (row[i] - self.mean[i]) / self.std[i];
            }
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<(String, Tensor)> {
        vec![
            (MEAN_RECORD.into(), Tensor::from_vec(self.mean.to_vec())),
            (STD_RECORD.into(), Tensor::from_vec(self.std.to_vec())),
        ]
    }

    pub fn from_records(records: &[(String, Tensor)]) -> Result<Self> {
        let get = |name: &str| -> Result<[f64; FEATURE_DIM]> {
            let t = records
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))?;
            t.data()
                .try_into()
                .map_err(|_| Error::Checkpoint(format!("{name}: expected {FEATURE_DIM} values, got {}", t.numel())))
        };
        let s = Standardizer {
            mean: get(MEAN_RECORD)?,
            std: get(STD_RECORD)?,
        };
        if let Some(i) = s.std.iter().position(|&v| !(v > MIN_STD) || !v.is_finite()) {
            return Err(Error::ZeroVariance { channel: i });
        }
        Ok(s)
    }
}
