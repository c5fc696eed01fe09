//! On-disk session layout:
//!
//! ```text
//! <root>/person_<id>/impedance.bin   back-to-back wire frames
//! <root>/person_<id>/pose.csv        pose track (see `pose::write_track`)
//! <root>/person_<id>/session.toml    person_id, pose_rate_hz, rate_ratio
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::codec::{decode_stream, encode_stream};
use super::SessionRecording;
use crate::error::{Error, Result};
use crate::pose::{load_track, save_track};

pub const IMPEDANCE_FILE: &str = "impedance.bin";
pub const POSE_FILE: &str = "pose.csv";
pub const META_FILE: &str = "session.toml";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionMeta {
    person_id: u32,
    pose_rate_hz: f64,
    rate_ratio: usize,
}

pub fn person_dir(root: &Path, person_id: u32) -> PathBuf {
    root.join(format!("person_{person_id}"))
}

pub fn save_session(root: &Path, s: &SessionRecording) -> Result<PathBuf> {
    let dir = person_dir(root, s.person_id);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(IMPEDANCE_FILE), encode_stream(&s.impedance)?)?;
    save_track(&dir.join(POSE_FILE), &s.poses)?;
    let meta = SessionMeta {
        person_id: s.person_id,
        pose_rate_hz: s.pose_rate_hz,
        rate_ratio: s.rate_ratio,
    };
    let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join(META_FILE), text)?;
    Ok(dir)
}

/// Loads one person directory, trimming trailing samples to alignment.
pub fn load_session(dir: &Path) -> Result<SessionRecording> {
    let text = fs::read_to_string(dir.join(META_FILE))?;
    let meta: SessionMeta = toml::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    let bytes = fs::read(dir.join(IMPEDANCE_FILE))?;
    let impedance = decode_stream(&bytes)?;
    let poses = load_track(&dir.join(POSE_FILE))?;
    let mut s = SessionRecording {
        person_id: meta.person_id,
        impedance,
        poses,
        pose_rate_hz: meta.pose_rate_hz,
        rate_ratio: meta.rate_ratio,
    };
    if s.rate_ratio == 0 {
        return Err(Error::Data(format!("{}: rate_ratio is zero", dir.display())));
    }
    s.trim_to_alignment();
    s.check_timestamps()?;
    s.check_aligned()?;
    Ok(s)
}

pub fn save_cohort(root: &Path, sessions: &[SessionRecording]) -> Result<()> {
    for s in sessions {
        save_session(root, s)?;
    }
    Ok(())
}

/// Every `person_*` directory under `root`, ordered by person id.
pub fn load_cohort(root: &Path) -> Result<Vec<SessionRecording>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        let is_person = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("person_"));
        if path.is_dir() && is_person {
            out.push(load_session(&path)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no person_* sessions under {}", root.display())));
    }
    out.sort_by_key(|s| s.person_id);
    Ok(out)
}

/// Header of the plain-text frame format used by the codec tools.
pub const FRAME_CSV_HEADER: [&str; 9] = [
    "timestamp_ms",
    "mag1",
    "phase1",
    "mag2",
    "phase2",
    "mag3",
    "phase3",
    "mag4",
    "phase4",
];

pub fn write_frames_csv<W: std::io::Write>(w: W, frames: &[super::SensorFrame]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(FRAME_CSV_HEADER)?;
    for f in frames {
        let mut rec = vec![f.timestamp_ms.to_string()];
        rec.extend(f.features().iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_frames_csv<R: std::io::Read>(r: R) -> Result<Vec<super::SensorFrame>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != FRAME_CSV_HEADER {
        return Err(Error::Data(format!("unexpected frame header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Data(format!("frame row {}: bad {what}", i + 1));
        let timestamp_ms = rec[0].trim().parse().map_err(|_| bad("timestamp"))?;
        let mut f = super::SensorFrame {
            timestamp_ms,
            channels: Default::default(),
        };
        for c in 0..super::NUM_CHANNELS {
            f.channels[c].magnitude = rec[1 + 2 * c].trim().parse().map_err(|_| bad("magnitude"))?;
            f.channels[c].phase = rec[2 + 2 * c].trim().parse().map_err(|_| bad("phase"))?;
        }
        out.push(f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Channel, SensorFrame};

    #[test]
    fn frame_csv_round_trip() {
        let frames = vec![SensorFrame {
            timestamp_ms: 9,
            channels: [Channel {
                magnitude: 101.5,
                phase: -0.25,
            }; 4],
        }];
        let mut buf = Vec::new();
        write_frames_csv(&mut buf, &frames).unwrap();
        assert_eq!(read_frames_csv(buf.as_slice()).unwrap(), frames);
        assert!(read_frames_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
