//! Anatomical joint limits and the squared-hinge limit penalty.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::pose::{PoseFrame, POSE_DIM};

/// Per-component `[min, max]` in radians, ordered neck(p,y,r), head(p,y,r),
/// jaw(p,y,r).
///
/// In config files the table is written per joint:
///
/// ```toml
/// [limits]
/// neck = [[-1.05, 1.05], [-1.05, 1.05], [-0.70, 0.70]]
/// head = [[-0.52, 0.52], [-0.79, 0.79], [-0.52, 0.52]]
/// jaw  = [[0.0, 0.52], [-0.17, 0.17], [-0.17, 0.17]]
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LimitsTable", into = "LimitsTable")]
pub struct JointLimits {
    min: [f64; POSE_DIM],
    max: [f64; POSE_DIM],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitsTable {
    neck: [[f64; 2]; 3],
    head: [[f64; 2]; 3],
    jaw: [[f64; 2]; 3],
}

impl TryFrom<LimitsTable> for JointLimits {
    type Error = Error;

    fn try_from(t: LimitsTable) -> Result<Self> {
        let mut min = [0.0; POSE_DIM];
        let mut max = [0.0; POSE_DIM];
        for (j, rows) in [t.neck, t.head, t.jaw].iter().enumerate() {
            for (a, [lo, hi]) in rows.iter().enumerate() {
                min[j * 3 + a] = *lo;
                max[j * 3 + a] = *hi;
            }
        }
        JointLimits::new(min, max)
    }
}

impl From<JointLimits> for LimitsTable {
    fn from(l: JointLimits) -> Self {
        let row = |j: usize| std::array::from_fn(|a| [l.min[j * 3 + a], l.max[j * 3 + a]]);
        LimitsTable {
            neck: row(0),
            head: row(1),
            jaw: row(2),
        }
    }
}

impl Default for JointLimits {
    fn default() -> Self {
        JointLimits {
            min: [-1.05, -1.05, -0.70, -0.52, -0.79, -0.52, 0.0, -0.17, -0.17],
            max: [1.05, 1.05, 0.70, 0.52, 0.79, 0.52, 0.52, 0.17, 0.17],
        }
    }
}

impl JointLimits {
    pub fn new(min: [f64; POSE_DIM], max: [f64; POSE_DIM]) -> Result<Self> {
        for i in 0..POSE_DIM {
            if !(min[i].is_finite() && max[i].is_finite() && min[i] < max[i]) {
                return Err(Error::Config(format!(
                    "joint limit {i}: need finite min < max, got [{}, {}]",
                    min[i], max[i]
                )));
            }
        }
        Ok(JointLimits { min, max })
    }

    pub fn min(&self) -> &[f64; POSE_DIM] {
        &self.min
    }

    pub fn max(&self) -> &[f64; POSE_DIM] {
        &self.max
    }

    pub fn midpoint(&self) -> PoseFrame {
        PoseFrame(std::array::from_fn(|i| 0.5 * (self.min[i] + self.max[i])))
    }

    pub fn contains(&self, pose: &PoseFrame) -> bool {
        pose.0
            .iter()
            .enumerate()
            .all(|(i, v)| *v >= self.min[i] && *v <= self.max[i])
    }
}

/// Clips every component into its limit interval.
pub fn clamp_to_limits(pose: &PoseFrame, limits: &JointLimits) -> PoseFrame {
    PoseFrame(std::array::from_fn(|i| pose.0[i].clamp(limits.min[i], limits.max[i])))
}

fn violation(v: f64, lo: f64, hi: f64) -> f64 {
    (lo - v).max(0.0).powi(2) + (v - hi).max(0.0).powi(2)
}

/// Penalty over a flat buffer of poses (length a multiple of 9), without a
/// tape.
pub fn bio_penalty_value(values: &[f64], limits: &JointLimits) -> Result<f64> {
    if values.is_empty() || !values.len().is_multiple_of(POSE_DIM) {
        return Err(Error::shape(
            "bio_penalty",
            format!("{} values is not a positive multiple of {POSE_DIM}", values.len()),
        ));
    }
    let total: f64 = values
        .iter()
        .enumerate()
        .map(|(k, v)| violation(*v, limits.min[k % POSE_DIM], limits.max[k % POSE_DIM]))
        .sum();
    Ok(total / values.len() as f64)
}

/// Mean over all `B·L_out·9` entries of `max(0, min − ŷ)² + max(0, ŷ − max)²`.
pub fn bio_penalty(g: &mut Graph, pred: Var, limits: &JointLimits) -> Result<Var> {
    let s = g.shape(pred);
    if s.len() != 3 || s[2] != POSE_DIM {
        return Err(Error::shape(
            "bio_penalty",
            format!("expected (B, L_out, 9), got {s:?}"),
        ));
    }
    let lo = g.constant(Tensor::from_vec(limits.min.to_vec()));
    let hi = g.constant(Tensor::from_vec(limits.max.to_vec()));
    let below = g.sub(pred, lo)?;
    let below = g.neg(below);
    let below = g.max_with_zero(below);
    let above = g.sub(pred, hi)?;
    let above = g.max_with_zero(above);
    let below = g.square(below);
    let above = g.square(above);
    let both = g.add(below, above)?;
    Ok(g.mean(both))
}
