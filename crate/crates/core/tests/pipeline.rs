use imphead::biomech::{bio_penalty_value, JointLimits};
use imphead::data::session::{load_cohort, save_cohort};
use imphead::data::synth::{default_cohort, MotionSpec};
use imphead::data::windows::window_count;
use imphead::data::*;
use imphead::pose::PoseFrame;
use proptest::prelude::*;

fn small_cfg() -> SynthConfig {
    SynthConfig {
        seed: 3,
        duration_s: 20.0,
        persons: default_cohort().into_iter().take(3).collect(),
        ..SynthConfig::default()
    }
}

#[test]
fn person_one_neck_pitch_stays_in_range() {
    let p = &default_cohort()[0];
    let track = synth_trajectory(&p.ranges, &JointLimits::default(), 5000, &MotionSpec::default(), 1).unwrap();
    assert!(track.iter().all(|f| (-0.44..=0.50).contains(&f.0[0])));
}

#[test]
fn trajectories_are_smooth_and_within_limits() {
    let limits = JointLimits::default();
    for (k, p) in default_cohort().iter().enumerate() {
        let track = synth_trajectory(&p.ranges, &limits, 9000, &MotionSpec::default(), k as u64).unwrap();
        let flat: Vec<f64> = track.iter().flat_map(|f| f.0).collect();
        assert_eq!(bio_penalty_value(&flat, &limits).unwrap(), 0.0);
        let max_step = track
            .windows(2)
            .flat_map(|w| (0..9).map(move |i| (w[1].0[i] - w[0].0[i]).abs()))
            .fold(0.0, f64::max);
        assert!(max_step < 0.05, "person {}: {max_step}", p.id);
    }
}

#[test]
fn generation_is_a_pure_function_of_config() {
    let cfg = small_cfg();
    let a = generate_cohort(&cfg, &JointLimits::default()).unwrap();
    let b = generate_cohort(&cfg, &JointLimits::default()).unwrap();
    assert_eq!(a, b);
    let c = generate_cohort(&SynthConfig { seed: 4, ..cfg }, &JointLimits::default()).unwrap();
    assert_ne!(a[0].impedance, c[0].impedance);
    for s in &a {
        s.check_aligned().unwrap();
        s.check_timestamps().unwrap();
        for f in &s.impedance {
            for ch in f.channels {
                assert!(ch.magnitude > 0.0);
                assert!(ch.phase > -std::f64::consts::PI && ch.phase <= std::f64::consts::PI);
            }
        }
    }
}

#[test]
fn forward_model_is_affine_without_noise_or_drift() {
    let cfg = SynthConfig {
        noise_magnitude: 0.0,
        noise_phase: 0.0,
        drift_magnitude: 0.0,
        drift_phase: 0.0,
        ..small_cfg()
    };
    let sensor = cfg.sensor_model(1);
    let theta: Vec<PoseFrame> = (0..4)
        .map(|t| {
            PoseFrame(std::array::from_fn(|i| {
                0.05 * (t as f64 + 1.0) * ((i as f64) - 4.0) / 4.0
            }))
        })
        .collect();
    let scaled: Vec<PoseFrame> = theta.iter().map(|f| PoseFrame(f.0.map(|v| 2.5 * v))).collect();
    let zero = forward_model(&[PoseFrame::zeros()], &sensor, 30.0, 9, 0).unwrap()[0];
    let a = forward_model(&theta, &sensor, 30.0, 9, 0).unwrap();
    let b = forward_model(&scaled, &sensor, 30.0, 9, 0).unwrap();
    for (fa, fb) in a.iter().zip(&b) {
        for c in 0..4 {
            let (z, ya, yb) = (zero.channels[c], fa.channels[c], fb.channels[c]);
            assert!(((yb.magnitude - z.magnitude) - 2.5 * (ya.magnitude - z.magnitude)).abs() < 1e-9);
            assert!(((yb.phase - z.phase) - 2.5 * (ya.phase - z.phase)).abs() < 1e-12);
        }
    }
}

#[test]
fn sessions_round_trip_through_disk() {
    let cohort = generate_cohort(&small_cfg(), &JointLimits::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_cohort(dir.path(), &cohort).unwrap();
    let back = load_cohort(dir.path()).unwrap();
    assert_eq!(back.len(), cohort.len());
    for (a, b) in cohort.iter().zip(&back) {
        assert_eq!(a.person_id, b.person_id);
        assert_eq!(a.poses, b.poses);
        for (x, y) in a.impedance.iter().zip(&b.impedance) {
            assert_eq!(x.timestamp_ms, y.timestamp_ms);
            assert_eq!(x.channels[0].magnitude as f32 as f64, y.channels[0].magnitude);
        }
    }
}

#[test]
fn test_split_uses_train_statistics() {
    let cohort = generate_cohort(&small_cfg(), &JointLimits::default()).unwrap();
    let train: Vec<_> = cohort[..2]
        .iter()
        .flat_map(|s| s.impedance.iter().map(|f| f.features()))
        .collect();
    let norm = Standardizer::fit(&train).unwrap();
    let test: Vec<_> = cohort[2].impedance.iter().map(|f| norm.apply(&f.features())).collect();
    let means: Vec<f64> = (0..8)
        .map(|c| test.iter().map(|r| r[c]).sum::<f64>() / test.len() as f64)
        .collect();
    assert!(means.iter().any(|m| m.abs() > 1e-3));
}

#[test]
fn folds_cover_the_cohort() {
    let folds = lopo_split(&[1, 2, 3, 4, 5, 6, 7]).unwrap();
    assert_eq!(folds.len(), 7);
    for f in folds {
        let mut all = f.train.clone();
        all.push(f.test);
        all.sort();
        assert_eq!(all, vec![1, 2, 3, 4, 5, 6, 7]);
    }
}

fn session(frames: usize, person: u32) -> SessionRecording {
    SessionRecording {
        person_id: person,
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

proptest! {
    #[test]
    fn windows_pair_identical_spans(frames in 0usize..80, l_out in 1usize..12, stride in 1usize..15) {
        let s = session(frames, 5);
        let w = make_windows(&s, l_out, stride, WindowMode::SameSpan).unwrap();
        let expected = if frames >= l_out { (frames - l_out) / stride + 1 } else { 0 };
        prop_assert_eq!(w.len(), expected);
        prop_assert_eq!(window_count(frames, l_out, stride, WindowMode::SameSpan), expected);
        for p in &w {
            prop_assert_eq!(p.x.len(), 9 * p.y.len());
            prop_assert_eq!(p.person_id, 5);
            // First and last impedance samples belong to the first and last pose frames.
            prop_assert_eq!(p.x[0][0] as usize / 9, p.y[0].0[0] as usize);
            prop_assert_eq!(p.x[p.x.len() - 1][0] as usize / 9, p.y[l_out - 1].0[0] as usize);
        }
    }
}
