//! Axis-angle and quaternion conversions, plus Gaussian smoothing of
//! quaternion tracks.
//!
//! Smoothing works on the unit sphere in R^4: every neighbour is first
//! moved onto the hemisphere of the centre frame (q and -q are the same
//! rotation), then the Gaussian-weighted sum is renormalized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{Joint, PoseFrame};

/// Allowed deviation of `‖q‖` from one for inputs that claim to be unit.
pub const UNIT_TOLERANCE: f64 = 1e-4;

/// Below this norm a weighted quaternion sum is treated as cancelled out.
pub const DEGENERATE_NORM: f64 = 1e-8;

/// Rotation vector: direction is the axis, length the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxisAngle(pub [f64; 3]);

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle([x, y, z])
    }

    pub fn zero() -> Self {
        AxisAngle([0.0; 3])
    }

    pub fn angle(&self) -> f64 {
        norm3(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Scalar-first unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub fn identity() -> Self {
        UnitQuaternion {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Normalizes `(w, x, y, z)`. Fails on non-finite or near-zero input.
    pub fn normalize(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < DEGENERATE_NORM {
            return Err(Error::InvalidInput(format!(
                "cannot normalize quaternion ({w}, {x}, {y}, {z})"
            )));
        }
        Ok(UnitQuaternion {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Accepts components whose norm is within [`UNIT_TOLERANCE`] of one and
    /// renormalizes them.
    pub fn from_components(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "quaternion norm {n} is not within {UNIT_TOLERANCE} of 1"
            )));
        }
        Self::normalize(w, x, y, z)
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &UnitQuaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// The same rotation with the opposite sign.
    pub fn negated(&self) -> Self {
        UnitQuaternion {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn axis_angle_to_quaternion(a: AxisAngle) -> Result<UnitQuaternion> {
    if !a.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite axis-angle {:?}", a.0)));
    }
    let theta = a.angle();
    let half = 0.5 * theta;
    // sin(θ/2)/θ, with its Taylor expansion near zero.
    let k = if theta > 1e-8 {
        half.sin() / theta
    } else {
        0.5 - theta * theta / 48.0
    };
    UnitQuaternion::normalize(half.cos(), k * a.0[0], k * a.0[1], k * a.0[2])
}

/// Canonical axis-angle with the angle in `[0, π]`. At exactly π the axis
/// sign is chosen so that its first non-zero component is positive.
pub fn quaternion_to_axis_angle(q: UnitQuaternion) -> Result<AxisAngle> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::InvalidInput(format!(
            "quaternion norm {n} is not within {UNIT_TOLERANCE} of 1"
        )));
    }
    let mut q = UnitQuaternion {
        w: q.w / n,
        x: q.x / n,
        y: q.y / n,
        z: q.z / n,
    };
    if q.w < 0.0 {
        q = q.negated();
    }
    let v = [q.x, q.y, q.z];
    let s = norm3(&v);
    if s < 1e-12 {
        // θ ≈ 2s/w; the vector part already points along the axis.
        let k = 2.0 / q.w;
        return Ok(AxisAngle([k * v[0], k * v[1], k * v[2]]));
    }
    let theta = 2.0 * s.atan2(q.w);
    let k = theta / s;
    let mut out = [k * v[0], k * v[1], k * v[2]];
    if q.w == 0.0 {
        if let Some(lead) = out.iter().find(|c| **c != 0.0) {
            if *lead < 0.0 {
                out.iter_mut().for_each(|c| *c = -*c);
            }
        }
    }
    Ok(AxisAngle(out))
}

/// Gaussian kernel settings in frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingParams {
    pub sigma: f64,
    pub half_window: usize,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        SmoothingParams {
            sigma: 2.0,
            half_window: 5,
        }
    }
}

impl SmoothingParams {
    pub fn new(sigma: f64, half_window: usize) -> Result<Self> {
        let p = SmoothingParams { sigma, half_window };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidInput(format!(
                "smoothing sigma must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// `w_k = exp(-k²/2σ²)` for `k = 0..=K`; the kernel is symmetric.
    pub fn weights(&self) -> Vec<f64> {
        let denom = 2.0 * self.sigma * self.sigma;
        (0..=self.half_window)
            .map(|k| {
                let k = k as f64;
                (-k * k / denom).exp()
            })
            .collect()
    }
}

/// Accumulates `Σ w·q` and renormalizes it.
fn normalized_sum(terms: impl Iterator<Item = (f64, [f64; 4])>, frame: usize) -> Result<UnitQuaternion> {
    let mut acc = [0.0; 4];
    let mut total = 0.0;
    for (w, q) in terms {
        total += w;
        for i in 0..4 {
            acc[i] += w * q[i];
        }
    }
    if total > 0.0 {
        acc.iter_mut().for_each(|a| *a /= total);
    }
    let n = (acc.iter().map(|a| a * a).sum::<f64>()).sqrt();
    if !(n >= DEGENERATE_NORM) {
        return Err(Error::DegenerateAverage { frame, norm: n });
    }
    Ok(UnitQuaternion {
        w: acc[0] / n,
        x: acc[1] / n,
        y: acc[2] / n,
        z: acc[3] / n,
    })
}

/// Smooths a quaternion track with a truncated Gaussian kernel.
///
/// Neighbours are sign-aligned to the centre frame before averaging, and
/// near the ends of the track the kernel is cut to the frames that exist.
pub fn gaussian_smooth(track: &[UnitQuaternion], params: &SmoothingParams) -> Result<Vec<UnitQuaternion>> {
    params.validate()?;
    if track.is_empty() {
        return Err(Error::InvalidInput("cannot smooth an empty track".into()));
    }
    let weights = params.weights();
    let k_max = params.half_window as isize;
    let len = track.len() as isize;
    let mut out = Vec::with_capacity(track.len());
    for t in 0..len {
        let centre = track[t as usize];
        let lo = (t - k_max).max(0);
        let hi = (t + k_max).min(len - 1);
        let terms = (lo..=hi).map(|s| {
            let q = track[s as usize];
            let q = if q.dot(&centre) < 0.0 { q.negated() } else { q };
            (weights[(s - t).unsigned_abs()], q.to_array())
        });
        out.push(normalized_sum(terms, t as usize)?);
    }
    Ok(out)
}

/// Converts every joint to quaternions, smooths each joint track
/// independently, and converts back.
pub fn smooth_ground_truth(track: &[PoseFrame], params: &SmoothingParams) -> Result<Vec<PoseFrame>> {
    params.validate()?;
    if track.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = vec![PoseFrame::zeros(); track.len()];
    for joint in Joint::ALL {
        let quats = track
            .iter()
            .map(|f| axis_angle_to_quaternion(f.joint(joint)))
            .collect::<Result<Vec<_>>>()?;
        let smoothed = gaussian_smooth(&quats, params)?;
        for (frame, q) in out.iter_mut().zip(smoothed) {
            frame.set_joint(joint, quaternion_to_axis_angle(q)?);
        }
    }
    Ok(out)
}
