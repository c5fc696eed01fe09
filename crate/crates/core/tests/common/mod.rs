//! Loop-based kinematics oracles shared by the metric and acceptance tests.
#![allow(dead_code)]

use imphead::kinematics::{Skeleton, VertexCloud};
use imphead::pose::PoseFrame;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type M3 = [[f64; 3]; 3];

pub fn rodrigues(v: [f64; 3]) -> M3 {
    let t = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if t == 0.0 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let (x, y, z) = (v[0] / t, v[1] / t, v[2] / t);
    let (s, c) = t.sin_cos();
    let k = 1.0 - c;
    [
        [c + x * x * k, x * y * k - z * s, x * z * k + y * s],
        [y * x * k + z * s, c + y * y * k, y * z * k - x * s],
        [z * x * k - y * s, z * y * k + x * s, c + z * z * k],
    ]
}

pub fn mul(a: &M3, b: &M3) -> M3 {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                r[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    r
}

pub fn apply(a: &M3, v: [f64; 3]) -> [f64; 3] {
    let mut r = [0.0; 3];
    for i in 0..3 {
        for k in 0..3 {
            r[i] += a[i][k] * v[k];
        }
    }
    r
}

/// World rotation and position of each joint of the root→neck→head→jaw chain.
pub fn oracle_fk(p: &PoseFrame, s: &Skeleton) -> [(M3, [f64; 3]); 3] {
    let mut out = [([[0.0; 3]; 3], [0.0; 3]); 3];
    for j in 0..3 {
        let local = rodrigues([p.0[3 * j], p.0[3 * j + 1], p.0[3 * j + 2]]);
        let (rot, pos) = match s.parents[j] {
            None => (local, s.offsets[j]),
            Some(pj) => {
                let (pr, pp) = out[pj];
                let o = apply(&pr, s.offsets[j]);
                (mul(&pr, &local), [pp[0] + o[0], pp[1] + o[1], pp[2] + o[2]])
            }
        };
        out[j] = (rot, pos);
    }
    out
}

pub fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn oracle_mpjpe(gt: &[PoseFrame], pred: &[PoseFrame], s: &Skeleton) -> f64 {
    let mut total = 0.0;
    for (g, p) in gt.iter().zip(pred) {
        let (a, b) = (oracle_fk(g, s), oracle_fk(p, s));
        for j in 0..3 {
            total += dist(a[j].1, b[j].1);
        }
    }
    1000.0 * total / (3 * gt.len()) as f64
}

pub fn oracle_skin(p: &PoseFrame, s: &Skeleton, c: &VertexCloud) -> Vec<[f64; 3]> {
    let world = oracle_fk(p, s);
    let rest = oracle_fk(&PoseFrame::zeros(), s);
    c.rest
        .iter()
        .zip(&c.weights)
        .map(|(v, w)| {
            let mut acc = [0.0; 3];
            for j in 0..3 {
                let local = [v[0] - rest[j].1[0], v[1] - rest[j].1[1], v[2] - rest[j].1[2]];
                let r = apply(&world[j].0, local);
                for k in 0..3 {
                    acc[k] += w[j] * (r[k] + world[j].1[k]);
                }
            }
            acc
        })
        .collect()
}

pub fn oracle_mpve(gt: &[PoseFrame], pred: &[PoseFrame], s: &Skeleton, c: &VertexCloud) -> f64 {
    let mut total = 0.0;
    for (g, p) in gt.iter().zip(pred) {
        let (a, b) = (oracle_skin(g, s, c), oracle_skin(p, s, c));
        total += a.iter().zip(&b).map(|(x, y)| dist(*x, *y)).sum::<f64>();
    }
    1000.0 * total / (gt.len() * c.len()) as f64
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> PoseFrame {
    PoseFrame(std::array::from_fn(|_| rng.random_range(-0.8..0.8)))
}
