//! Scoring of the model and the two reference predictors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::biomech::JointLimits;
use crate::data::windows::stack_inputs;
use crate::data::{Standardizer, WindowPair, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::kinematics::{mpjpe_by_joint, mpve_by_joint, JointErrors, Skeleton, VertexCloud};
use crate::model::Imp2Head;
use crate::pose::{PoseFrame, POSE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mpjpe: JointErrors,
    pub mpve: JointErrors,
}

pub fn score(gt: &[PoseFrame], pred: &[PoseFrame], skeleton: &Skeleton, cloud: &VertexCloud) -> Result<Metrics> {
    Ok(Metrics {
        mpjpe: mpjpe_by_joint(gt, pred, skeleton)?,
        mpve: mpve_by_joint(gt, pred, skeleton, cloud)?,
    })
}

fn targets(windows: &[WindowPair]) -> Vec<PoseFrame> {
    windows.iter().flat_map(|w| w.y.iter().copied()).collect()
}

/// Model predictions for every window, flattened in window order.
pub fn predict_windows(
    model: &Imp2Head,
    windows: &[WindowPair],
    norm: &Standardizer,
    batch: usize,
) -> Result<Vec<PoseFrame>> {
    let refs: Vec<&WindowPair> = windows.iter().collect();
    let mut out = Vec::with_capacity(windows.len() * model.config().l_out);
    for chunk in refs.chunks(batch.max(1)) {
        let y = model.predict(&stack_inputs(chunk, norm)?)?;
        for f in y.data().chunks(POSE_DIM) {
            out.push(PoseFrame::from_slice(f)?);
        }
    }
    Ok(out)
}

pub fn evaluate(
    model: &Imp2Head,
    windows: &[WindowPair],
    norm: &Standardizer,
    skeleton: &Skeleton,
    cloud: &VertexCloud,
) -> Result<Metrics> {
    if windows.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    let pred = predict_windows(model, windows, norm, 64)?;
    score(&targets(windows), &pred, skeleton, cloud)
}

/// Predicts the midpoint of the joint-limit table for every frame.
pub fn midpoint_predictions(windows: &[WindowPair], limits: &JointLimits) -> Vec<PoseFrame> {
    let mid = limits.midpoint();
    windows.iter().flat_map(|w| vec![mid; w.y.len()]).collect()
}

/// Least-squares map (with bias) from the standardized features of a
/// window's last input frame to a pose, applied to every output frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LastFrameLinear {
    /// `(FEATURE_DIM + 1) × POSE_DIM`, bias row last.
    pub coef: DMatrix<f64>,
    pub norm: Standardizer,
}

/// Ridge term keeping the normal equations positive definite.
const RIDGE: f64 = 1e-9;

impl LastFrameLinear {
    fn design_row(&self, w: &WindowPair) -> Result<[f64; FEATURE_DIM + 1]> {
        let last =
            w.x.last()
                .ok_or_else(|| Error::InvalidInput("window without input".into()))?;
        let z = self.norm.apply(last);
        Ok(std::array::from_fn(|i| if i < FEATURE_DIM { z[i] } else { 1.0 }))
    }

    /// Fits on every (last input frame, target frame) pair.
    pub fn fit(windows: &[WindowPair], norm: &Standardizer) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::InvalidInput("no windows to fit".into()));
        }
        let mut model = LastFrameLinear {
            coef: DMatrix::zeros(FEATURE_DIM + 1, POSE_DIM),
            norm: norm.clone(),
        };
        let d = FEATURE_DIM + 1;
        let mut xtx = DMatrix::<f64>::zeros(d, d);
        let mut xty = DMatrix::<f64>::zeros(d, POSE_DIM);
        for w in windows {
            let x = DVector::from_row_slice(&model.design_row(w)?);
            for y in &w.y {
                xtx += &x * x.transpose();
                xty += &x * DMatrix::from_row_slice(1, POSE_DIM, &y.0);
            }
        }
        for i in 0..d {
            xtx[(i, i)] += RIDGE;
        }
        let chol = xtx
            .cholesky()
            .ok_or_else(|| Error::Numeric("last-frame regression is singular".into()))?;
        model.coef = chol.solve(&xty);
        Ok(model)
    }

    pub fn predict(&self, windows: &[WindowPair]) -> Result<Vec<PoseFrame>> {
        let mut out = Vec::new();
        for w in windows {
            let x = DMatrix::from_row_slice(1, FEATURE_DIM + 1, &self.design_row(w)?);
            let y = x * &self.coef;
            let frame = PoseFrame(std::array::from_fn(|j| y[(0, j)]));
            out.extend(std::iter::repeat_n(frame, w.y.len()));
        }
        Ok(out)
    }
}

/// Ground truth flattened the same way as the prediction helpers.
pub fn window_targets(windows: &[WindowPair]) -> Vec<PoseFrame> {
    targets(windows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(x_last: [f64; FEATURE_DIM], y: PoseFrame) -> WindowPair {
        WindowPair {
            x: vec![[0.0; FEATURE_DIM], x_last],
            y: vec![y; 2],
            person_id: 1,
            start: 0,
        }
    }

    #[test]
    fn linear_baseline_recovers_exact_map() {
        let norm = Standardizer {
            mean: [0.0; FEATURE_DIM],
            std: [1.0; FEATURE_DIM],
        };
        let windows: Vec<_> = (0..40)
            .map(|i| {
                let x: [f64; FEATURE_DIM] =
                    std::array::from_fn(|c| ((i * 7 + c * 3) % 11) as f64 - 5.0 + 0.1 * (i * c) as f64);
                let y = PoseFrame(std::array::from_fn(|j| {
                    0.1 * x[j % FEATURE_DIM] - 0.05 * x[(j + 3) % FEATURE_DIM] + 0.2
                }));
                window(x, y)
            })
            .collect();
        let lin = LastFrameLinear::fit(&windows, &norm).unwrap();
        let pred = lin.predict(&windows).unwrap();
        for (p, g) in pred.iter().zip(window_targets(&windows)) {
            for j in 0..POSE_DIM {
                assert!((p.0[j] - g.0[j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ground_truth_scores_zero() {
        let skel = Skeleton::default();
        let cloud = VertexCloud::generate(50, &skel, 0.03, 1).unwrap();
        let gt = vec![PoseFrame([0.1; 9]), PoseFrame([-0.2; 9])];
        let m = score(&gt, &gt, &skel, &cloud).unwrap();
        assert_eq!(m.mpjpe.mean, 0.0);
        assert_eq!(m.mpve.mean, 0.0);
    }
}
