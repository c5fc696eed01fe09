//! Pose frames and the plain-text ground-truth track format.
//!
//! A pose frame holds nine axis-angle components, three per joint, in the
//! fixed order neck, head, jaw. Within each joint the components are the
//! axis-angle vector `(x, y, z)`, read as `(pitch, yaw, roll)`.
//!
//! Track files are comma-separated with a header row:
//!
//! ```text
//! frame,neck_pitch,neck_yaw,neck_roll,head_pitch,head_yaw,head_roll,jaw_pitch,jaw_yaw,jaw_roll
//! 0,0.01,-0.2,0.0,...
//! ```
//!
//! Angles are radians. `frame` is a zero-based index and must be strictly
//! increasing; gaps are rejected on read.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotations::AxisAngle;

pub const NUM_JOINTS: usize = 3;
pub const POSE_DIM: usize = 9;
pub const JOINT_NAMES: [&str; NUM_JOINTS] = ["neck", "head", "jaw"];
pub const AXIS_NAMES: [&str; 3] = ["pitch", "yaw", "roll"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Joint {
    Neck = 0,
    Head = 1,
    Jaw = 2,
}

impl Joint {
    pub const ALL: [Joint; NUM_JOINTS] = [Joint::Neck, Joint::Head, Joint::Jaw];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        JOINT_NAMES[self.index()]
    }
}

/// Nine axis-angle components: neck(p,y,r), head(p,y,r), jaw(p,y,r).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseFrame(pub [f64; POSE_DIM]);

impl PoseFrame {
    pub fn zeros() -> Self {
        PoseFrame([0.0; POSE_DIM])
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != POSE_DIM {
            return Err(Error::InvalidInput(format!(
                "pose frame needs {POSE_DIM} values, got {}",
                values.len()
            )));
        }
        let mut out = [0.0; POSE_DIM];
        out.copy_from_slice(values);
        Ok(PoseFrame(out))
    }

    pub fn joint(&self, joint: Joint) -> AxisAngle {
        let i = joint.index() * 3;
        AxisAngle::new(self.0[i], self.0[i + 1], self.0[i + 2])
    }

    pub fn set_joint(&mut self, joint: Joint, value: AxisAngle) {
        let i = joint.index() * 3;
        self.0[i..i + 3].copy_from_slice(&value.0);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Column names of the track file, including the leading `frame` column.
pub fn track_header() -> Vec<String> {
    let mut cols = vec!["frame".to_string()];
    for joint in JOINT_NAMES {
        for axis in AXIS_NAMES {
            cols.push(format!("{joint}_{axis}"));
        }
    }
    cols
}

pub fn write_track<W: Write>(writer: W, track: &[PoseFrame]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(track_header())?;
    for (i, frame) in track.iter().enumerate() {
        let mut rec = Vec::with_capacity(POSE_DIM + 1);
        rec.push(i.to_string());
        // `{:?}` prints the shortest representation that round-trips exactly.
        rec.extend(frame.0.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_track<R: Read>(reader: R) -> Result<Vec<PoseFrame>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = r.headers()?.clone();
    let expected = track_header();
    if header.len() != expected.len() || header.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(Error::Data(format!(
            "unexpected track header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let frame: usize = rec[0]
            .parse()
            .map_err(|_| Error::Data(format!("row {row}: bad frame index {:?}", &rec[0])))?;
        if frame != out.len() {
            return Err(Error::Data(format!(
                "row {row}: frame index {frame}, expected {}",
                out.len()
            )));
        }
        let mut values = [0.0f64; POSE_DIM];
        for (k, v) in values.iter_mut().enumerate() {
            *v = rec[k + 1]
                .parse()
                .map_err(|_| Error::Data(format!("row {row}: bad value {:?}", &rec[k + 1])))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("row {row}: non-finite value")));
            }
        }
        out.push(PoseFrame(values));
    }
    Ok(out)
}

pub fn save_track(path: &Path, track: &[PoseFrame]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_track(std::io::BufWriter::new(f), track)
}

pub fn load_track(path: &Path) -> Result<Vec<PoseFrame>> {
    let f = std::fs::File::open(path)?;
    read_track(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn track_round_trip_is_exact() {
        let track = vec![
            PoseFrame([0.1, -0.2, 0.3, 1.0 / 3.0, 0.0, -1e-17, 0.25, 0.0, 0.17]),
            PoseFrame::zeros(),
        ];
        let mut buf = Vec::new();
        write_track(&mut buf, &track).unwrap();
        let back = read_track(buf.as_slice()).unwrap();
        assert_eq!(back, track);
    }

    #[test]
    fn header_lists_ten_columns() {
        let h = track_header();
        assert_eq!(h.len(), 10);
        assert_eq!(h[1], "neck_pitch");
        assert_eq!(h[9], "jaw_roll");
    }

    #[test]
    fn rejects_frame_gap() {
        let text = format!(
            "{}\n0,0,0,0,0,0,0,0,0,0\n2,0,0,0,0,0,0,0,0,0\n",
            track_header().join(",")
        );
        assert!(matches!(read_track(text.as_bytes()), Err(Error::Data(_))));
    }
}
