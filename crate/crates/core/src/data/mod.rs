//! Impedance samples, recorded sessions, synthetic generation, windowing
//! and cross-validation splits.

pub mod codec;
pub mod session;
pub mod split;
pub mod standardize;
pub mod synth;
pub mod windows;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::PoseFrame;

pub use codec::{decode_frame, encode_frame, CodecError};
pub use split::{lopo_split, Fold};
pub use standardize::Standardizer;
pub use synth::{forward_model, generate_cohort, synth_trajectory, SynthConfig};
pub use windows::{make_windows, WindowMode, WindowPair};

pub const NUM_CHANNELS: usize = 4;
pub const FEATURE_DIM: usize = 2 * NUM_CHANNELS;

/// Magnitude (ohms) and phase (radians) of one measurement channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Channel {
    pub magnitude: f64,
    pub phase: f64,
}

/// One timestamped impedance sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SensorFrame {
    pub timestamp_ms: u64,
    pub channels: [Channel; NUM_CHANNELS],
}

impl SensorFrame {
    /// `[mag1, phase1, ..., mag4, phase4]`.
    pub fn features(&self) -> [f64; FEATURE_DIM] {
        std::array::from_fn(|i| {
            let c = &self.channels[i / 2];
            if i % 2 == 0 {
                c.magnitude
            } else {
                c.phase
            }
        })
    }
}

/// One person's aligned impedance and pose tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecording {
    pub person_id: u32,
    pub impedance: Vec<SensorFrame>,
    pub poses: Vec<PoseFrame>,
    pub pose_rate_hz: f64,
    /// Impedance samples per pose frame.
    pub rate_ratio: usize,
}

impl SessionRecording {
    pub fn check_aligned(&self) -> Result<()> {
        if self.rate_ratio == 0 || self.impedance.len() != self.rate_ratio * self.poses.len() {
            return Err(Error::Data(format!(
                "person {}: {} impedance frames for {} pose frames at ratio {}",
                self.person_id,
                self.impedance.len(),
                self.poses.len(),
                self.rate_ratio
            )));
        }
        Ok(())
    }

    /// Drops trailing samples so that the impedance count is exactly
    /// `rate_ratio` times the pose count.
    pub fn trim_to_alignment(&mut self) {
        let poses = self.poses.len().min(self.impedance.len() / self.rate_ratio.max(1));
        self.poses.truncate(poses);
        self.impedance.truncate(poses * self.rate_ratio);
    }

    pub fn check_timestamps(&self) -> Result<()> {
        if let Some(i) = self
            .impedance
            .windows(2)
            .position(|w| w[1].timestamp_ms <= w[0].timestamp_ms)
        {
            return Err(Error::Data(format!(
                "person {}: timestamps not increasing at impedance frame {}",
                self.person_id,
                i + 1
            )));
        }
        Ok(())
    }
}
