//! Three-joint forward kinematics, linear blend skinning, and the
//! joint/vertex position error metrics.
//!
//! The chain is root → neck → head → jaw. Each joint's local rotation is
//! the matrix exponential of its axis-angle vector; `(x, y, z)` are the
//! pitch, yaw and roll axes. Positions are meters internally and errors
//! are reported in millimeters.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{Joint, PoseFrame, NUM_JOINTS};

pub const METERS_TO_MM: f64 = 1000.0;

/// Vertex count of the full parametric head mesh, for runs that want the
/// same averaging population size.
pub const FULL_MESH_VERTICES: usize = 10475;

/// Joint chain with rest offsets (meters) relative to each parent. The root
/// joint's offset is its world position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Skeleton {
    /// Parent index per joint; `-1` marks the root in files.
    #[serde(default = "default_parents", with = "parent_indices")]
    pub parents: [Option<usize>; NUM_JOINTS],
    pub offsets: [[f64; 3]; NUM_JOINTS],
}

mod parent_indices {
    use super::NUM_JOINTS;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &[Option<usize>; NUM_JOINTS], s: S) -> Result<S::Ok, S::Error> {
        p.map(|v| v.map_or(-1, |i| i as i64)).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[Option<usize>; NUM_JOINTS], D::Error> {
        let raw = <[i64; NUM_JOINTS]>::deserialize(d)?;
        Ok(raw.map(|v| usize::try_from(v).ok()))
    }
}

fn default_parents() -> [Option<usize>; NUM_JOINTS] {
    [None, Some(0), Some(1)]
}

impl Default for Skeleton {
    fn default() -> Self {
        Skeleton {
            parents: default_parents(),
            offsets: [[0.0, 0.0, 0.0], [0.0, 0.10, 0.0], [0.0, -0.04, 0.05]],
        }
    }
}

/// World-space rotation and translation of one joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

pub fn rotation_matrix(axis_angle: [f64; 3]) -> Matrix3<f64> {
    Rotation3::from_scaled_axis(Vector3::from(axis_angle)).into_inner()
}

impl Skeleton {
    pub fn validate(&self) -> Result<()> {
        for (j, p) in self.parents.iter().enumerate() {
            match p {
                None if j == 0 => {}
                Some(p) if *p < j => {}
                _ => {
                    return Err(Error::Config(format!(
                        "joint {j}: parent {p:?} does not form a tree rooted at joint 0"
                    )))
                }
            }
        }
        if !self.offsets.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::Config("skeleton offsets must be finite".into()));
        }
        Ok(())
    }

    pub fn world_transforms(&self, pose: &PoseFrame) -> [RigidTransform; NUM_JOINTS] {
        let mut out = [RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }; NUM_JOINTS];
        for joint in Joint::ALL {
            let j = joint.index();
            let local = rotation_matrix(pose.joint(joint).0);
            let offset = Vector3::from(self.offsets[j]);
            out[j] = match self.parents[j] {
                None => RigidTransform {
                    rotation: local,
                    translation: offset,
                },
                Some(p) => {
                    let parent = out[p];
                    RigidTransform {
                        rotation: parent.rotation * local,
                        translation: parent.translation + parent.rotation * offset,
                    }
                }
            };
        }
        out
    }

    pub fn rest_positions(&self) -> [Vector3<f64>; NUM_JOINTS] {
        forward_kinematics(&PoseFrame::zeros(), self)
    }
}

pub fn forward_kinematics(pose: &PoseFrame, skeleton: &Skeleton) -> [Vector3<f64>; NUM_JOINTS] {
    skeleton.world_transforms(pose).map(|t| t.translation)
}

/// Rest-pose vertices with per-joint skinning weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexCloud {
    pub rest: Vec<[f64; 3]>,
    pub weights: Vec<[f64; NUM_JOINTS]>,
}

impl VertexCloud {
    pub fn new(rest: Vec<[f64; 3]>, weights: Vec<[f64; NUM_JOINTS]>) -> Result<Self> {
        let c = VertexCloud { rest, weights };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.rest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rest.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rest.len() != self.weights.len() || self.rest.is_empty() {
            return Err(Error::InvalidInput(format!(
                "vertex cloud has {} positions and {} weight rows",
                self.rest.len(),
                self.weights.len()
            )));
        }
        for (i, w) in self.weights.iter().enumerate() {
            let s: f64 = w.iter().sum();
            if w.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "vertex {i}: weights {w:?} are not a convex combination"
                )));
            }
        }
        if !self.rest.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("vertex positions must be finite".into()));
        }
        Ok(())
    }

    /// Seeded cloud: each vertex is scattered around a random joint with a
    /// Gaussian offset of `spread` meters, and weighted by a Gaussian of its
    /// distance to every joint.
    pub fn generate(n: usize, skeleton: &Skeleton, spread: f64, seed: u64) -> Result<Self> {
        if n == 0 || !(spread > 0.0) {
            return Err(Error::InvalidInput(format!(
                "cloud needs n > 0 and spread > 0, got {n}, {spread}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, spread).expect("positive spread");
        let joints = skeleton.rest_positions();
        let mut rest = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for _ in 0..n {
            let anchor = joints[rng.random_range(0..NUM_JOINTS)];
            let p = anchor + Vector3::from_fn(|_, _| normal.sample(&mut rng));
            let mut w: [f64; NUM_JOINTS] = std::array::from_fn(|j| {
                let d2 = (p - joints[j]).norm_squared();
                (-d2 / (2.0 * spread * spread)).exp().max(1e-12)
            });
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            rest.push([p.x, p.y, p.z]);
            weights.push(w);
        }
        VertexCloud::new(rest, weights)
    }

    /// Joint with the largest weight for each vertex (first wins on ties).
    pub fn dominant_joints(&self) -> Vec<usize> {
        self.weights
            .iter()
            .map(|w| (0..NUM_JOINTS).fold(0, |best, j| if w[j] > w[best] { j } else { best }))
            .collect()
    }
}

/// Linear blend skinning: each vertex is the weighted sum of its rigid
/// images under every joint's rest-to-posed transform.
pub fn skin_vertices(pose: &PoseFrame, skeleton: &Skeleton, cloud: &VertexCloud) -> Vec<Vector3<f64>> {
    let rest_joints = skeleton.rest_positions();
    let world = skeleton.world_transforms(pose);
    cloud
        .rest
        .iter()
        .zip(&cloud.weights)
        .map(|(v, w)| {
            let v = Vector3::from(*v);
            (0..NUM_JOINTS).fold(Vector3::zeros(), |acc, j| {
                acc + w[j] * world[j].apply(&(v - rest_joints[j]))
            })
        })
        .collect()
}

/// Mean errors per joint plus their average, in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointErrors {
    pub per_joint: [f64; NUM_JOINTS],
    pub mean: f64,
}

impl JointErrors {
    /// Arithmetic mean of the three joint columns.
    pub fn joint_average(&self) -> f64 {
        self.per_joint.iter().sum::<f64>() / NUM_JOINTS as f64
    }
}

fn check_pair(gt: &[PoseFrame], pred: &[PoseFrame], op: &'static str) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::shape(
            op,
            format!("{} ground-truth vs {} predicted frames", gt.len(), pred.len()),
        ));
    }
    if gt.is_empty() {
        return Err(Error::shape(op, "no frames"));
    }
    Ok(())
}

/// Mean joint distance between two sets of joint positions, in mm.
pub fn mpjpe_positions(gt: &[[Vector3<f64>; NUM_JOINTS]], pred: &[[Vector3<f64>; NUM_JOINTS]]) -> Result<JointErrors> {
    if gt.len() != pred.len() || gt.is_empty() {
        return Err(Error::shape("mpjpe", format!("{} vs {} frames", gt.len(), pred.len())));
    }
    let mut sums = [0.0; NUM_JOINTS];
    for (g, p) in gt.iter().zip(pred) {
        for j in 0..NUM_JOINTS {
            sums[j] += (g[j] - p[j]).norm();
        }
    }
    let n = gt.len() as f64;
    let per_joint = sums.map(|s| s / n * METERS_TO_MM);
    let mean = per_joint.iter().sum::<f64>() / NUM_JOINTS as f64;
    Ok(JointErrors { per_joint, mean })
}

/// Mean per-joint position error over all frames (a flattened `B·T` batch),
/// in mm, with the per-joint breakdown.
pub fn mpjpe_by_joint(gt: &[PoseFrame], pred: &[PoseFrame], skeleton: &Skeleton) -> Result<JointErrors> {
    check_pair(gt, pred, "mpjpe")?;
    let g: Vec<_> = gt.iter().map(|p| forward_kinematics(p, skeleton)).collect();
    let p: Vec<_> = pred.iter().map(|p| forward_kinematics(p, skeleton)).collect();
    mpjpe_positions(&g, &p)
}

pub fn mpjpe(gt: &[PoseFrame], pred: &[PoseFrame], skeleton: &Skeleton) -> Result<f64> {
    Ok(mpjpe_by_joint(gt, pred, skeleton)?.mean)
}

/// Mean vertex distance in mm. `per_joint` averages over the vertices whose
/// largest skinning weight belongs to that joint; `mean` averages over all
/// vertices.
pub fn mpve_by_joint(
    gt: &[PoseFrame],
    pred: &[PoseFrame],
    skeleton: &Skeleton,
    cloud: &VertexCloud,
) -> Result<JointErrors> {
    check_pair(gt, pred, "mpve")?;
    cloud.validate()?;
    let owner = cloud.dominant_joints();
    let mut counts = [0usize; NUM_JOINTS];
    owner.iter().for_each(|&j| counts[j] += 1);
    let mut sums = [0.0; NUM_JOINTS];
    let mut total = 0.0;
    for (g, p) in gt.iter().zip(pred) {
        let vg = skin_vertices(g, skeleton, cloud);
        let vp = skin_vertices(p, skeleton, cloud);
        for ((a, b), &j) in vg.iter().zip(&vp).zip(&owner) {
            let d = (a - b).norm();
            sums[j] += d;
            total += d;
        }
    }
    let frames = gt.len() as f64;
    let per_joint = std::array::from_fn(|j| {
        if counts[j] == 0 {
            0.0
        } else {
            sums[j] / (frames * counts[j] as f64) * METERS_TO_MM
        }
    });
    Ok(JointErrors {
        per_joint,
        mean: total / (frames * cloud.len() as f64) * METERS_TO_MM,
    })
}

pub fn mpve(gt: &[PoseFrame], pred: &[PoseFrame], skeleton: &Skeleton, cloud: &VertexCloud) -> Result<f64> {
    Ok(mpve_by_joint(gt, pred, skeleton, cloud)?.mean)
}

/// `sqrt(a² + b²)` for two independent error sources.
pub fn compose_error(a: f64, b: f64) -> Result<f64> {
    if !(a >= 0.0 && b >= 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidInput(format!(
            "errors must be finite and non-negative, got {a} and {b}"
        )));
    }
    Ok(a.hypot(b))
}

/// On-disk skeleton plus vertex cloud.
///
/// ```toml
/// [skeleton]
/// offsets = [[0.0, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, -0.04, 0.05]]
///
/// [[vertices]]
/// rest = [0.01, 0.09, 0.02]
/// weights = [0.1, 0.8, 0.1]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyModelFile {
    pub skeleton: Skeleton,
    pub vertices: Vec<VertexRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexRecord {
    pub rest: [f64; 3],
    pub weights: [f64; NUM_JOINTS],
}

impl BodyModelFile {
    pub fn new(skeleton: &Skeleton, cloud: &VertexCloud) -> Self {
        BodyModelFile {
            skeleton: skeleton.clone(),
            vertices: cloud
                .rest
                .iter()
                .zip(&cloud.weights)
                .map(|(r, w)| VertexRecord { rest: *r, weights: *w })
                .collect(),
        }
    }

    pub fn into_parts(self) -> Result<(Skeleton, VertexCloud)> {
        self.skeleton.validate()?;
        let (rest, weights) = self.vertices.into_iter().map(|v| (v.rest, v.weights)).unzip();
        Ok((self.skeleton, VertexCloud::new(rest, weights)?))
    }

    pub fn load(path: &Path) -> Result<(Skeleton, VertexCloud)> {
        let text = std::fs::read_to_string(path)?;
        let file: BodyModelFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        file.into_parts()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
