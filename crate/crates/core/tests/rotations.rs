use std::f64::consts::{FRAC_PI_2, PI};

use imphead::kinematics::rotation_matrix;
use imphead::pose::PoseFrame;
use imphead::rotations::{
    axis_angle_to_quaternion, gaussian_smooth, quaternion_to_axis_angle, smooth_ground_truth, AxisAngle,
    SmoothingParams, UnitQuaternion,
};
use proptest::prelude::*;

fn quat(w: f64, x: f64, y: f64, z: f64) -> UnitQuaternion {
    UnitQuaternion::normalize(w, x, y, z).unwrap()
}

fn matrix(q: &UnitQuaternion) -> nalgebra::Matrix3<f64> {
    rotation_matrix(quaternion_to_axis_angle(*q).unwrap().0)
}

#[test]
fn quarter_turn_about_z() {
    let q = axis_angle_to_quaternion(AxisAngle::new(0.0, 0.0, FRAC_PI_2)).unwrap();
    let h = (0.5f64).sqrt();
    let [w, x, y, z] = q.to_array();
    assert!((w - h).abs() < 1e-15 && x == 0.0 && y == 0.0 && (z - h).abs() < 1e-15);
}

#[test]
fn quaternion_oracle_matches_matrix_exponential() {
    // Rotating (1,0,0) by π/2 about z gives (0,1,0).
    let m = rotation_matrix([0.0, 0.0, FRAC_PI_2]);
    let v = m * nalgebra::Vector3::new(1.0, 0.0, 0.0);
    assert!((v - nalgebra::Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
}

#[test]
fn smoothing_weights_at_defaults() {
    let w = SmoothingParams::default().weights();
    assert_eq!(w.len(), 6);
    assert_eq!(w[0], 1.0);
    assert!((w[1] - (-1.0f64 / 8.0).exp()).abs() < 1e-15);
    assert!((w[5] - (-25.0f64 / 8.0).exp()).abs() < 1e-15);
}

#[test]
fn hemisphere_alignment_uses_centre_frame() {
    // Same rotation with alternating signs smooths to itself.
    let q = quat(0.9, 0.1, -0.3, 0.2);
    let track: Vec<_> = (0..20).map(|i| if i % 2 == 0 { q } else { q.negated() }).collect();
    let out = gaussian_smooth(&track, &SmoothingParams::default()).unwrap();
    for (a, b) in out.iter().zip(&track) {
        assert!((a.dot(b).abs() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn pose_track_smoothing_keeps_constant_track() {
    let frame = PoseFrame([0.2, -0.1, 0.05, 0.3, 0.0, -0.2, 0.1, 0.02, -0.03]);
    let out = smooth_ground_truth(&vec![frame; 30], &SmoothingParams::default()).unwrap();
    for f in out {
        for (a, b) in f.0.iter().zip(frame.0) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn round_trip_near_pi() {
    let a = AxisAngle::new(PI - 1e-6, 0.0, 0.0);
    let back = quaternion_to_axis_angle(axis_angle_to_quaternion(a).unwrap()).unwrap();
    assert!((back.0[0] - a.0[0]).abs() < 1e-9);
}

fn unit_quat() -> impl Strategy<Value = UnitQuaternion> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-2)
        .prop_map(|(w, x, y, z)| quat(w, x, y, z))
}

/// A slowly rotating track with random per-frame sign flips.
fn track() -> impl Strategy<Value = Vec<UnitQuaternion>> {
    (
        unit_quat(),
        prop::array::uniform3(-0.05..0.05f64),
        prop::collection::vec(any::<bool>(), 100),
    )
        .prop_map(|(q0, rate, flips)| {
            flips
                .iter()
                .enumerate()
                .map(|(t, &flip)| {
                    let step = axis_angle_to_quaternion(AxisAngle(rate.map(|r| r * t as f64))).unwrap();
                    let [a, b, c, d] = step.to_array();
                    let [w, x, y, z] = q0.to_array();
                    let q = quat(
                        a * w - b * x - c * y - d * z,
                        a * x + b * w + c * z - d * y,
                        a * y - b * z + c * w + d * x,
                        a * z + b * y - c * x + d * w,
                    );
                    if flip {
                        q.negated()
                    } else {
                        q
                    }
                })
                .collect()
        })
}

proptest! {
    #[test]
    fn axis_angle_round_trip(v in prop::array::uniform3(-1.7..1.7f64)) {
        let a = AxisAngle(v);
        prop_assume!(a.angle() < PI - 1e-3);
        let back = quaternion_to_axis_angle(axis_angle_to_quaternion(a).unwrap()).unwrap();
        for i in 0..3 {
            prop_assert!((back.0[i] - v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothed_frames_are_unit(t in track()) {
        for q in gaussian_smooth(&t, &SmoothingParams::default()).unwrap() {
            prop_assert!((q.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sign_flips_do_not_change_rotations(t in track(), flips in prop::collection::vec(any::<bool>(), 100)) {
        let p = SmoothingParams::default();
        let flipped: Vec<_> = t.iter().zip(&flips).map(|(q, &f)| if f { q.negated() } else { *q }).collect();
        let a = gaussian_smooth(&t, &p).unwrap();
        let b = gaussian_smooth(&flipped, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((matrix(x) - matrix(y)).abs().max() < 1e-9);
        }
    }
}
