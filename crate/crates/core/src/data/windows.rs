//! Sliding-window pairing of impedance inputs with pose targets.

use serde::{Deserialize, Serialize};

use super::{SessionRecording, Standardizer, FEATURE_DIM};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::pose::{PoseFrame, POSE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Input and target cover the same time span.
    #[default]
    SameSpan,
    /// Target is the `l_out` frames following the input span.
    Forecast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    /// `(rate_ratio · l_out)` raw feature rows.
    pub x: Vec<[f64; FEATURE_DIM]>,
    pub y: Vec<PoseFrame>,
    pub person_id: u32,
    /// First pose frame of the input span.
    pub start: usize,
}

/// Number of windows `make_windows` yields for `frames` pose frames.
pub fn window_count(frames: usize, l_out: usize, stride: usize, mode: WindowMode) -> usize {
    let need = match mode {
        WindowMode::SameSpan => l_out,
        WindowMode::Forecast => 2 * l_out,
    };
    if stride == 0 || frames < need {
        0
    } else {
        (frames - need) / stride + 1
    }
}

pub fn make_windows(
    session: &SessionRecording,
    l_out: usize,
    stride: usize,
    mode: WindowMode,
) -> Result<Vec<WindowPair>> {
    if l_out == 0 || stride == 0 {
        return Err(Error::InvalidInput("l_out and stride must be at least 1".into()));
    }
    session.check_aligned()?;
    let r = session.rate_ratio;
    let n = window_count(session.poses.len(), l_out, stride, mode);
    let offset = match mode {
        WindowMode::SameSpan => 0,
        WindowMode::Forecast => l_out,
    };
    Ok((0..n)
        .map(|k| {
            let s = k * stride;
            WindowPair {
                x: session.impedance[r * s..r * (s + l_out)]
                    .iter()
                    .map(|f| f.features())
                    .collect(),
                y: session.poses[s + offset..s + offset + l_out].to_vec(),
                person_id: session.person_id,
                start: s,
            }
        })
        .collect())
}

fn check_uniform(windows: &[&WindowPair]) -> Result<(usize, usize)> {
    let first = windows
        .first()
        .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
    let (lx, ly) = (first.x.len(), first.y.len());
    if windows.iter().any(|w| w.x.len() != lx || w.y.len() != ly) {
        return Err(Error::InvalidInput("windows in a batch differ in length".into()));
    }
    Ok((lx, ly))
}

/// `(B, L_in, 8)` standardized input tensor.
pub fn stack_inputs(windows: &[&WindowPair], norm: &Standardizer) -> Result<Tensor> {
    let (lx, _) = check_uniform(windows)?;
    let data = windows
        .iter()
        .flat_map(|w| w.x.iter().flat_map(|row| norm.apply(row)))
        .collect();
    Tensor::new(vec![windows.len(), lx, FEATURE_DIM], data)
}

/// `(B, L_out, 9)` target tensor.
pub fn stack_targets(windows: &[&WindowPair]) -> Result<Tensor> {
    let (_, ly) = check_uniform(windows)?;
    let data = windows.iter().flat_map(|w| w.y.iter().flat_map(|p| p.0)).collect();
    Tensor::new(vec![windows.len(), ly, POSE_DIM], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SensorFrame;

    fn session(frames: usize) -> SessionRecording {
        SessionRecording {
            person_id: 3,
            impedance: (0..frames * 9)
                .map(|i| {
                    let mut f = SensorFrame {
                        timestamp_ms: i as u64,
                        ..Default::default()
                    };
                    f.channels[0].magnitude = i as f64;
                    f
                })
                .collect(),
            poses: (0..frames).map(|i| PoseFrame([i as f64; 9])).collect(),
            pose_rate_hz: 30.0,
            rate_ratio: 9,
        }
    }

    #[test]
    fn counts() {
        let s = session(100);
        assert_eq!(make_windows(&s, 10, 10, WindowMode::SameSpan).unwrap().len(), 10);
        assert_eq!(make_windows(&s, 10, 1, WindowMode::SameSpan).unwrap().len(), 91);
        assert_eq!(make_windows(&session(9), 10, 1, WindowMode::SameSpan).unwrap().len(), 0);
        assert_eq!(make_windows(&s, 10, 10, WindowMode::Forecast).unwrap().len(), 9);
    }

    #[test]
    fn spans_line_up() {
        let s = session(40);
        for w in make_windows(&s, 10, 7, WindowMode::SameSpan).unwrap() {
            assert_eq!(w.x.len(), 90);
            assert_eq!(w.x[0][0], (9 * w.start) as f64);
            assert_eq!(w.y[0].0[0], w.start as f64);
            assert_eq!(w.y[9].0[0], (w.start + 9) as f64);
        }
        let f = make_windows(&s, 10, 7, WindowMode::Forecast).unwrap();
        assert_eq!(f[1].y[0].0[0], 17.0);
    }

    #[test]
    fn misaligned_rejected() {
        let mut s = session(20);
        s.impedance.pop();
        assert!(make_windows(&s, 10, 1, WindowMode::SameSpan).is_err());
    }
}
