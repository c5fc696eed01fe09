//! Fixed-size binary frame for one impedance sample.
//!
//! ```text
//! offset  size  field
//!      0     2  magic 0x4E 0x53 ("NS")
//!      2     1  version 0x01
//!      3     8  timestamp, milliseconds, u64 little-endian
//!     11    32  8 × f32 little-endian: mag1, phase1, mag2, phase2, ..., mag4, phase4
//!     43     2  CRC-16/CCITT-FALSE of bytes 0..43, u16 little-endian
//! ```
//!
//! Magnitudes are ohms, phases radians. Values are stored as `f32`, so a
//! decoded frame equals the encoded one after `f32` rounding.

use std::f64::consts::PI;

use thiserror::Error;

use super::SensorFrame;

pub const MAGIC: [u8; 2] = [0x4E, 0x53];
pub const VERSION: u8 = 0x01;
pub const FRAME_LEN: usize = 45;
const PAYLOAD_LEN: usize = FRAME_LEN - 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0:#04x}")]
    BadVersion(u8),
    #[error("short buffer: need {needed} bytes, got {got}")]
    ShortBuffer { needed: usize, got: usize },
    #[error("crc mismatch: frame says {stored:#06x}, computed {computed:#06x}")]
    CrcMismatch { stored: u16, computed: u16 },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("frame {index}: {source}")]
    InStream {
        index: usize,
        #[source]
        source: Box<CodecError>,
    },
}

const fn crc_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x1021
            } else {
                crc << 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static CRC_TABLE: [u16; 256] = crc_table();

/// CRC-16/CCITT-FALSE: polynomial 0x1021, init 0xFFFF, no reflection, no
/// final xor.
pub fn crc16_ccitt_false(bytes: &[u8]) -> u16 {
    bytes.iter().fold(0xFFFF, |crc, &b| {
        (crc << 8) ^ CRC_TABLE[((crc >> 8) as u8 ^ b) as usize]
    })
}

fn max_phase() -> f32 {
    PI as f32
}

fn check_values(values: impl Iterator<Item = (f64, f64)>) -> Result<(), CodecError> {
    for (c, (mag, phase)) in values.enumerate() {
        if !(mag.is_finite() && mag > 0.0) {
            return Err(CodecError::InvalidFrame(format!("channel {}: magnitude {mag}", c + 1)));
        }
        if !(phase.is_finite() && phase.abs() <= max_phase() as f64) {
            return Err(CodecError::InvalidFrame(format!("channel {}: phase {phase}", c + 1)));
        }
    }
    Ok(())
}

pub fn encode_frame(frame: &SensorFrame) -> Result<[u8; FRAME_LEN], CodecError> {
    check_values(frame.channels.iter().map(|c| (c.magnitude, c.phase)))?;
    let mut out = [0u8; FRAME_LEN];
    out[0..2].copy_from_slice(&MAGIC);
    out[2] = VERSION;
    out[3..11].copy_from_slice(&frame.timestamp_ms.to_le_bytes());
    for (c, ch) in frame.channels.iter().enumerate() {
        let at = 11 + c * 8;
        let mag = ch.magnitude as f32;
        if !(mag > 0.0) {
            return Err(CodecError::InvalidFrame(format!(
                "channel {}: magnitude {} underflows f32",
                c + 1,
                ch.magnitude
            )));
        }
        out[at..at + 4].copy_from_slice(&mag.to_le_bytes());
        out[at + 4..at + 8].copy_from_slice(&(ch.phase as f32).to_le_bytes());
    }
    let crc = crc16_ccitt_false(&out[..PAYLOAD_LEN]);
    out[PAYLOAD_LEN..].copy_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Decodes one frame from the start of `bytes`; trailing bytes are ignored.
pub fn decode_frame(bytes: &[u8]) -> Result<SensorFrame, CodecError> {
    if bytes.len() < FRAME_LEN {
        return Err(CodecError::ShortBuffer {
            needed: FRAME_LEN,
            got: bytes.len(),
        });
    }
    if bytes[0..2] != MAGIC {
        return Err(CodecError::BadMagic([bytes[0], bytes[1]]));
    }
    if bytes[2] != VERSION {
        return Err(CodecError::BadVersion(bytes[2]));
    }
    let stored = u16::from_le_bytes([bytes[PAYLOAD_LEN], bytes[PAYLOAD_LEN + 1]]);
    let computed = crc16_ccitt_false(&bytes[..PAYLOAD_LEN]);
    if stored != computed {
        return Err(CodecError::CrcMismatch { stored, computed });
    }
    let timestamp_ms = u64::from_le_bytes(bytes[3..11].try_into().unwrap());
    let f = |at: usize| f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64;
    let mut frame = SensorFrame {
        timestamp_ms,
        channels: Default::default(),
    };
    for (c, ch) in frame.channels.iter_mut().enumerate() {
        ch.magnitude = f(11 + c * 8);
        ch.phase = f(15 + c * 8);
    }
    check_values(frame.channels.iter().map(|c| (c.magnitude, c.phase)))?;
    Ok(frame)
}

pub fn encode_stream(frames: &[SensorFrame]) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(frames.len() * FRAME_LEN);
    for (index, f) in frames.iter().enumerate() {
        let bytes = encode_frame(f).map_err(|e| CodecError::InStream {
            index,
            source: Box::new(e),
        })?;
        out.extend_from_slice(&bytes);
    }
    Ok(out)
}

/// Decodes back-to-back frames. The buffer length must be a whole number
/// of frames.
pub fn decode_stream(bytes: &[u8]) -> Result<Vec<SensorFrame>, CodecError> {
    let whole = bytes.len() / FRAME_LEN * FRAME_LEN;
    let mut out = Vec::with_capacity(whole / FRAME_LEN);
    for (index, chunk) in bytes.chunks(FRAME_LEN).enumerate() {
        out.push(decode_frame(chunk).map_err(|e| CodecError::InStream {
            index,
            source: Box::new(e),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Channel;

    fn frame() -> SensorFrame {
        SensorFrame {
            timestamp_ms: 12345,
            channels: [
                Channel {
                    magnitude: 101.25,
                    phase: -0.3,
                },
                Channel {
                    magnitude: 99.0,
                    phase: 0.1,
                },
                Channel {
                    magnitude: 120.5,
                    phase: PI,
                },
                Channel {
                    magnitude: 80.0,
                    phase: -1.0,
                },
            ],
        }
    }

    #[test]
    fn crc_check_value() {
        assert_eq!(crc16_ccitt_false(b"123456789"), 0x29B1);
        assert_eq!(crc16_ccitt_false(b""), 0xFFFF);
    }

    #[test]
    fn round_trip_quantizes_to_f32() {
        let f = frame();
        let back = decode_frame(&encode_frame(&f).unwrap()).unwrap();
        assert_eq!(back.timestamp_ms, f.timestamp_ms);
        for (a, b) in back.channels.iter().zip(&f.channels) {
            assert_eq!(a.magnitude, b.magnitude as f32 as f64);
            assert_eq!(a.phase, b.phase as f32 as f64);
        }
    }

    #[test]
    fn distinct_error_kinds() {
        let good = encode_frame(&frame()).unwrap();
        let mut b = good;
        b[0] = 0;
        assert!(matches!(decode_frame(&b), Err(CodecError::BadMagic(_))));
        let mut b = good;
        b[2] = 2;
        assert!(matches!(decode_frame(&b), Err(CodecError::BadVersion(2))));
        assert!(matches!(decode_frame(&good[..44]), Err(CodecError::ShortBuffer { .. })));
        let mut b = good;
        b[20] ^= 0x01;
        assert!(matches!(decode_frame(&b), Err(CodecError::CrcMismatch { .. })));
    }

    #[test]
    fn invalid_values_rejected_on_encode() {
        let mut f = frame();
        f.channels[1].magnitude = 0.0;
        assert!(matches!(encode_frame(&f), Err(CodecError::InvalidFrame(_))));
        let mut f = frame();
        f.channels[2].phase = 4.0;
        assert!(encode_frame(&f).is_err());
    }

    #[test]
    fn stream_reports_frame_index() {
        let bytes = encode_stream(&[frame(), frame(), frame()]).unwrap();
        assert_eq!(decode_stream(&bytes).unwrap().len(), 3);
        let mut bad = bytes.clone();
        bad[FRAME_LEN + 12] ^= 0xFF;
        match decode_stream(&bad) {
            Err(CodecError::InStream { index: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(decode_stream(&bytes[..bytes.len() - 3]).is_err());
    }
}
