//! Seeded synthetic cohort: smooth head/neck/jaw trajectories inside
//! per-person ranges, and a linear mixing model from joint angles to the
//! four impedance channels.
//!
//! Impedance model per channel `c` at impedance sample time `t`:
//!
//! ```text
//! magnitude_c(t) = Z0_c + Σ_j A_cj·θ_j(t) + drift_m·sin(2πt/period + φ_c) + N(0, σ_m²)
//! phase_c(t)     = P0_c + Σ_j B_cj·θ_j(t) + drift_p·sin(2πt/period + φ_c) + N(0, σ_p²)
//! ```
//!
//! with the pose linearly interpolated up to the impedance rate and the
//! phase wrapped to `(-π, π]`. Each person gets their own jittered copy of
//! `A`, `B`, `Z0` and `P0`.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Channel, SensorFrame, SessionRecording, NUM_CHANNELS};
use crate::biomech::{clamp_to_limits, JointLimits};
use crate::error::{Error, Result};
use crate::pose::{PoseFrame, POSE_DIM};

/// Smallest magnitude the forward model emits, in ohms.
pub const MIN_MAGNITUDE: f64 = 1e-3;

/// One synthetic participant: an id and per-component rotation ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonSpec {
    pub id: u32,
    pub ranges: JointLimits,
}

fn ranges(rows: [[f64; 2]; POSE_DIM]) -> JointLimits {
    JointLimits::new(rows.map(|r| r[0]), rows.map(|r| r[1])).expect("static table is ordered")
}

/// Rotation ranges of the seven default persons.
pub fn default_cohort() -> Vec<PersonSpec> {
    let table: [[[f64; 2]; POSE_DIM]; 7] = [
        [
            [-0.44, 0.50],
            [-0.92, 0.89],
            [-0.63, 0.68],
            [-0.39, 0.47],
            [-0.51, 0.49],
            [-0.42, 0.48],
            [0.03, 0.48],
            [-0.13, 0.14],
            [-0.12, 0.14],
        ],
        [
            [-0.68, 0.91],
            [-0.52, 0.79],
            [-0.42, 0.59],
            [-0.47, 0.34],
            [-0.41, 0.45],
            [-0.28, 0.40],
            [0.11, 0.46],
            [-0.09, 0.12],
            [-0.07, 0.08],
        ],
        [
            [-0.97, 0.47],
            [-0.77, 0.35],
            [-0.62, 0.51],
            [-0.25, 0.51],
            [-0.47, 0.39],
            [-0.40, 0.23],
            [0.06, 0.48],
            [-0.15, 0.04],
            [-0.10, 0.09],
        ],
        [
            [-0.88, 0.93],
            [-0.89, 0.98],
            [-0.24, 0.51],
            [-0.35, 0.28],
            [-0.43, 0.45],
            [-0.49, 0.46],
            [0.00, 0.50],
            [-0.05, 0.11],
            [-0.15, 0.12],
        ],
        [
            [-0.50, 0.39],
            [-1.03, 0.94],
            [-0.65, 0.70],
            [-0.46, 0.48],
            [-0.33, 0.50],
            [-0.11, 0.31],
            [0.24, 0.51],
            [-0.16, -0.01],
            [-0.06, 0.12],
        ],
        [
            [-0.86, 0.82],
            [-0.62, 0.22],
            [-0.29, 0.41],
            [-0.29, 0.43],
            [-0.48, 0.27],
            [-0.35, 0.37],
            [0.13, 0.46],
            [-0.04, 0.12],
            [-0.07, 0.06],
        ],
        [
            [-1.04, 1.01],
            [-0.38, 0.56],
            [-0.59, 0.65],
            [-0.46, 0.19],
            [-0.51, 0.28],
            [-0.49, 0.09],
            [0.01, 0.45],
            [-0.06, 0.11],
            [-0.15, 0.11],
        ],
    ];
    table
        .iter()
        .enumerate()
        .map(|(i, rows)| PersonSpec {
            id: i as u32 + 1,
            ranges: ranges(*rows),
        })
        .collect()
}

/// Trajectory timing: pose rate and the band the component sinusoids are
/// drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub pose_rate_hz: f64,
    pub freq_min_hz: f64,
    pub freq_max_hz: f64,
}

impl Default for MotionSpec {
    fn default() -> Self {
        MotionSpec {
            pose_rate_hz: 30.0,
            freq_min_hz: 0.02,
            freq_max_hz: 0.2,
        }
    }
}

/// Per-person sensor response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub mixing_magnitude: [[f64; POSE_DIM]; NUM_CHANNELS],
    pub baseline_magnitude: [f64; NUM_CHANNELS],
    pub mixing_phase: [[f64; POSE_DIM]; NUM_CHANNELS],
    pub baseline_phase: [f64; NUM_CHANNELS],
    pub drift_magnitude: f64,
    pub drift_phase: f64,
    pub drift_period_s: f64,
    /// Drift phase offset per channel, radians.
    pub drift_offset: [f64; NUM_CHANNELS],
    pub noise_magnitude: f64,
    pub noise_phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub duration_s: f64,
    pub rate_ratio: usize,
    pub motion: MotionSpec,
    pub persons: Vec<PersonSpec>,
    pub mixing_magnitude: [[f64; POSE_DIM]; NUM_CHANNELS],
    pub baseline_magnitude: [f64; NUM_CHANNELS],
    pub mixing_phase: [[f64; POSE_DIM]; NUM_CHANNELS],
    pub baseline_phase: [f64; NUM_CHANNELS],
    /// Relative standard deviation of the per-person mixing jitter.
    pub person_jitter: f64,
    /// Relative standard deviation of the per-person baseline jitter.
    pub baseline_jitter: f64,
    pub drift_magnitude: f64,
    pub drift_phase: f64,
    pub drift_period_s: f64,
    pub noise_magnitude: f64,
    pub noise_phase: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            duration_s: 1800.0,
            rate_ratio: 9,
            motion: MotionSpec::default(),
            persons: default_cohort(),
            // Jaw roll (last column) does not reach the electrodes; the
            // remaining eight columns are well conditioned.
            mixing_magnitude: [
                [4.1, 6.3, -1.7, 6.8, -1.2, -0.2, 7.0, 7.6, 0.0],
                [-7.2, -7.7, 0.8, -2.6, -7.4, -1.8, -0.2, 5.9, 0.0],
                [-2.8, -0.3, -3.2, -3.0, -6.9, 0.8, 6.6, -7.0, 0.0],
                [-6.4, -7.5, 1.7, -5.1, 4.7, -2.6, 6.0, 0.2, 0.0],
            ],
            baseline_magnitude: [110.0, 105.0, 95.0, 100.0],
            mixing_phase: [
                [0.029, -0.045, 0.037, 0.049, -0.053, -0.028, 0.045, 0.003, 0.0],
                [-0.039, -0.060, -0.048, 0.023, -0.040, 0.060, -0.014, 0.039, 0.0],
                [-0.027, 0.039, 0.050, 0.001, -0.035, 0.055, 0.055, 0.057, 0.0],
                [0.044, -0.023, -0.001, -0.034, 0.008, 0.028, 0.043, 0.034, 0.0],
            ],
            baseline_phase: [-0.20, -0.25, -0.15, -0.18],
            person_jitter: 0.15,
            baseline_jitter: 0.005,
            drift_magnitude: 0.5,
            drift_phase: 0.005,
            drift_period_s: 300.0,
            noise_magnitude: 0.3,
            noise_phase: 0.002,
        }
    }
}

/// SplitMix64 step, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one `(person, stream)` pair under a base seed.
pub fn derive_seed(base: u64, person: u32, stream: u64) -> u64 {
    mix(mix(base ^ mix(person as u64)) ^ stream)
}

const STREAM_TRAJECTORY: u64 = 1;
const STREAM_SENSOR: u64 = 2;
const STREAM_NOISE: u64 = 3;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.persons.is_empty() {
            return fail("synth: no persons".into());
        }
        let mut ids: Vec<u32> = self.persons.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return fail("synth: duplicate person ids".into());
        }
        if !(self.duration_s > 0.0) || self.rate_ratio == 0 {
            return fail("synth: duration and rate_ratio must be positive".into());
        }
        let m = &self.motion;
        if !(m.pose_rate_hz > 0.0 && m.freq_min_hz > 0.0 && m.freq_min_hz <= m.freq_max_hz) {
            return fail(format!("synth: bad motion spec {m:?}"));
        }
        if m.pose_rate_hz * self.rate_ratio as f64 > 1000.0 {
            return fail("synth: impedance rate above 1 kHz cannot carry distinct millisecond timestamps".into());
        }
        for v in [
            self.noise_magnitude,
            self.noise_phase,
            self.person_jitter,
            self.baseline_jitter,
            self.drift_magnitude,
            self.drift_phase,
        ] {
            if !(v >= 0.0) {
                return fail("synth: noise, drift and jitter must be non-negative".into());
            }
        }
        if !(self.drift_period_s > 0.0) {
            return fail("synth: drift period must be positive".into());
        }
        Ok(())
    }

    pub fn duration_frames(&self) -> usize {
        (self.duration_s * self.motion.pose_rate_hz).round() as usize
    }

    /// The jittered sensor response of one person.
    pub fn sensor_model(&self, person: u32) -> SensorModel {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, person, STREAM_SENSOR));
        let j = self.person_jitter;
        let mut jitter = |v: f64| v * (1.0 + j * gauss(&mut rng));
        let mixing_magnitude = self.mixing_magnitude.map(|row| row.map(&mut jitter));
        let mixing_phase = self.mixing_phase.map(|row| row.map(&mut jitter));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, person, STREAM_SENSOR + 100));
        let baseline_magnitude = self
            .baseline_magnitude
            .map(|v| v * (1.0 + self.baseline_jitter * gauss(&mut rng)));
        let baseline_phase = self
            .baseline_phase
            .map(|v| v * (1.0 + self.baseline_jitter * gauss(&mut rng)));
        let drift_offset = std::array::from_fn(|_| rng.random_range(0.0..TAU));
        SensorModel {
            mixing_magnitude,
            baseline_magnitude,
            mixing_phase,
            baseline_phase,
            drift_magnitude: self.drift_magnitude,
            drift_phase: self.drift_phase,
            drift_period_s: self.drift_period_s,
            drift_offset,
            noise_magnitude: self.noise_magnitude,
            noise_phase: self.noise_phase,
        }
    }
}

/// Smooth joint trajectory: each component is a normalized sum of three
/// seeded sinusoids mapped affinely onto the person's range, then clamped
/// to the joint limits.
pub fn synth_trajectory(
    ranges: &JointLimits,
    limits: &JointLimits,
    duration_frames: usize,
    motion: &MotionSpec,
    seed: u64,
) -> Result<Vec<PoseFrame>> {
    if duration_frames == 0 {
        return Err(Error::InvalidInput("trajectory needs at least one frame".into()));
    }
    if !(motion.freq_min_hz > 0.0 && motion.freq_min_hz <= motion.freq_max_hz && motion.pose_rate_hz > 0.0) {
        return Err(Error::InvalidInput(format!("bad motion spec {motion:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (amplitude, angular frequency per frame, phase) × 3 per component.
    let waves: Vec<[(f64, f64, f64); 3]> = (0..POSE_DIM)
        .map(|_| {
            std::array::from_fn(|_| {
                let amp = rng.random_range(0.5..=1.0);
                let freq = rng.random_range(motion.freq_min_hz..=motion.freq_max_hz);
                let phase = rng.random_range(0.0..TAU);
                (amp, TAU * freq / motion.pose_rate_hz, phase)
            })
        })
        .collect();
    let track = (0..duration_frames)
        .map(|t| {
            let t = t as f64;
            let raw = PoseFrame(std::array::from_fn(|i| {
                let w = &waves[i];
                let norm: f64 = w.iter().map(|(a, _, _)| a).sum();
                let s: f64 = w.iter().map(|(a, f, p)| a * (f * t + p).sin()).sum::<f64>() / norm;
                let (lo, hi) = (ranges.min()[i], ranges.max()[i]);
                0.5 * (lo + hi) + 0.5 * (hi - lo) * s
            }));
            clamp_to_limits(&raw, limits)
        })
        .collect();
    Ok(track)
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_phase(p: f64) -> f64 {
    if p > -PI && p <= PI {
        return p;
    }
    let r = (p + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// Pose at fractional frame position `tau`, linearly interpolated and held
/// at the ends.
fn interpolate(poses: &[PoseFrame], tau: f64) -> PoseFrame {
    let last = poses.len() - 1;
    let i0 = (tau.floor() as usize).min(last);
    let i1 = (i0 + 1).min(last);
    let a = (tau - i0 as f64).clamp(0.0, 1.0);
    PoseFrame(std::array::from_fn(|k| (1.0 - a) * poses[i0].0[k] + a * poses[i1].0[k]))
}

/// Impedance track at `rate_ratio` samples per pose frame.
pub fn forward_model(
    poses: &[PoseFrame],
    sensor: &SensorModel,
    pose_rate_hz: f64,
    rate_ratio: usize,
    seed: u64,
) -> Result<Vec<SensorFrame>> {
    if poses.is_empty() || rate_ratio == 0 || !(pose_rate_hz > 0.0) {
        return Err(Error::InvalidInput(
            "forward model needs poses, a positive rate and ratio".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let imp_rate = pose_rate_hz * rate_ratio as f64;
    let n = poses.len() * rate_ratio;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let theta = interpolate(poses, i as f64 / rate_ratio as f64);
        let t = i as f64 / imp_rate;
        let mut frame = SensorFrame {
            timestamp_ms: (i as f64 * 1000.0 / imp_rate).floor() as u64,
            channels: Default::default(),
        };
        for c in 0..NUM_CHANNELS {
            let drift = (TAU * t / sensor.drift_period_s + sensor.drift_offset[c]).sin();
            let dot = |row: &[f64; POSE_DIM]| row.iter().zip(&theta.0).map(|(a, b)| a * b).sum::<f64>();
            let mut mag =
                sensor.baseline_magnitude[c] + dot(&sensor.mixing_magnitude[c]) + sensor.drift_magnitude * drift;
            let mut phase = sensor.baseline_phase[c] + dot(&sensor.mixing_phase[c]) + sensor.drift_phase * drift;
            if sensor.noise_magnitude > 0.0 {
                mag += sensor.noise_magnitude * gauss(&mut rng);
            }
            if sensor.noise_phase > 0.0 {
                phase += sensor.noise_phase * gauss(&mut rng);
            }
            frame.channels[c] = Channel {
                magnitude: mag.max(MIN_MAGNITUDE),
                phase: wrap_phase(phase),
            };
        }
        out.push(frame);
    }
    Ok(out)
}

/// Builds every configured person's session. Output depends only on the
/// configuration (including its seed).
pub fn generate_cohort(cfg: &SynthConfig, limits: &JointLimits) -> Result<Vec<SessionRecording>> {
    cfg.validate()?;
    let frames = cfg.duration_frames().max(1);
    cfg.persons
        .par_iter()
        .map(|p| {
            let poses = synth_trajectory(
                &p.ranges,
                limits,
                frames,
                &cfg.motion,
                derive_seed(cfg.seed, p.id, STREAM_TRAJECTORY),
            )?;
            let sensor = cfg.sensor_model(p.id);
            let impedance = forward_model(
                &poses,
                &sensor,
                cfg.motion.pose_rate_hz,
                cfg.rate_ratio,
                derive_seed(cfg.seed, p.id, STREAM_NOISE),
            )?;
            Ok(SessionRecording {
                person_id: p.id,
                impedance,
                poses,
                pose_rate_hz: cfg.motion.pose_rate_hz,
                rate_ratio: cfg.rate_ratio,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_phase(0.5), 0.5);
        assert!((wrap_phase(PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(3.0 * TAU + 0.2) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn default_table_has_seven_people() {
        let c = default_cohort();
        assert_eq!(c.len(), 7);
        assert_eq!(c[0].ranges.min()[0], -0.44);
        assert_eq!(c[0].ranges.max()[0], 0.50);
        assert_eq!(c[4].ranges.max()[7], -0.01);
    }

    #[test]
    fn interpolation_hits_frames_and_midpoints() {
        let poses = vec![PoseFrame::zeros(), PoseFrame([1.0; 9])];
        assert_eq!(interpolate(&poses, 0.0), poses[0]);
        assert_eq!(interpolate(&poses, 0.5).0[3], 0.5);
        assert_eq!(interpolate(&poses, 1.0), poses[1]);
        assert_eq!(interpolate(&poses, 1.7), poses[1]);
    }

    #[test]
    fn zero_pose_no_noise_gives_baselines() {
        let cfg = SynthConfig {
            drift_magnitude: 0.0,
            drift_phase: 0.0,
            noise_magnitude: 0.0,
            noise_phase: 0.0,
            ..SynthConfig::default()
        };
        let sensor = cfg.sensor_model(1);
        let imp = forward_model(&[PoseFrame::zeros(); 3], &sensor, 30.0, 9, 0).unwrap();
        assert_eq!(imp.len(), 27);
        for f in &imp {
            for c in 0..4 {
                assert_eq!(f.channels[c].magnitude, sensor.baseline_magnitude[c]);
                assert_eq!(f.channels[c].phase, sensor.baseline_phase[c]);
            }
        }
    }

    #[test]
    fn config_validation_catches_duplicates() {
        let mut cfg = SynthConfig::default();
        cfg.persons[1].id = cfg.persons[0].id;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_trajectory_rejected() {
        let r = JointLimits::default();
        assert!(synth_trajectory(&r, &r, 0, &MotionSpec::default(), 0).is_err());
    }
}
