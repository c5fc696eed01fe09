use imphead::data::codec::{crc16_ccitt_false, decode_stream, encode_stream, FRAME_LEN};
use imphead::data::{decode_frame, encode_frame, Channel, CodecError, SensorFrame};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORACLE: crc::Crc<u16> = crc::Crc::<u16>::new(&crc::CRC_16_IBM_3740);

fn golden() -> Vec<u8> {
    include_str!("data/golden_frame.hex")
        .split_whitespace()
        .map(|h| u8::from_str_radix(h, 16).unwrap())
        .collect()
}

fn unit_frame() -> SensorFrame {
    SensorFrame {
        timestamp_ms: 1,
        channels: [Channel {
            magnitude: 1.0,
            phase: 0.0,
        }; 4],
    }
}

fn random_frame(rng: &mut ChaCha8Rng) -> SensorFrame {
    SensorFrame {
        timestamp_ms: rng.random(),
        channels: std::array::from_fn(|_| Channel {
            magnitude: rng.random_range(1e-3..1e4),
            phase: rng.random_range(-std::f64::consts::PI + 1e-9..=std::f64::consts::PI),
        }),
    }
}

#[test]
fn golden_bytes() {
    let g = golden();
    assert_eq!(g.len(), FRAME_LEN);
    assert_eq!(encode_frame(&unit_frame()).unwrap().to_vec(), g);
    assert_eq!(decode_frame(&g).unwrap(), unit_frame());
}

#[test]
fn crc_agrees_with_reference_crate() {
    let g = golden();
    assert_eq!(crc16_ccitt_false(&g[..43]), ORACLE.checksum(&g[..43]));
    assert_eq!(u16::from_le_bytes([g[43], g[44]]), ORACLE.checksum(&g[..43]));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for len in 0..200 {
        let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        assert_eq!(crc16_ccitt_false(&bytes), ORACLE.checksum(&bytes));
    }
}

#[test]
fn every_single_byte_corruption_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let frames: Vec<_> = (0..1000).map(|_| random_frame(&mut rng)).collect();
    let bytes = encode_stream(&frames).unwrap();
    for (k, chunk) in bytes.chunks(FRAME_LEN).enumerate() {
        let pos = rng.random_range(0..FRAME_LEN);
        let mut bad = chunk.to_vec();
        bad[pos] ^= rng.random_range(1..=255u8);
        assert!(decode_frame(&bad).is_err(), "frame {k} byte {pos}");
    }
}

#[test]
fn truncated_stream_is_rejected() {
    let bytes = encode_stream(&[unit_frame(), unit_frame()]).unwrap();
    assert!(matches!(
        decode_stream(&bytes[..FRAME_LEN + 10]),
        Err(CodecError::InStream { index: 1, .. })
    ));
}

proptest! {
    #[test]
    fn round_trip_is_identity_after_quantization(seed in any::<u64>()) {
        let f = random_frame(&mut ChaCha8Rng::seed_from_u64(seed));
        let back = decode_frame(&encode_frame(&f).unwrap()).unwrap();
        prop_assert_eq!(back.timestamp_ms, f.timestamp_ms);
        for (a, b) in back.channels.iter().zip(&f.channels) {
            prop_assert_eq!(a.magnitude, b.magnitude as f32 as f64);
            prop_assert_eq!(a.phase, b.phase as f32 as f64);
        }
        // Re-encoding a decoded frame is bit-stable.
        prop_assert_eq!(encode_frame(&back).unwrap(), encode_frame(&f).unwrap());
    }

    #[test]
    fn any_flipped_byte_fails(pos in 0..FRAME_LEN, mask in 1..=255u8) {
        let mut b = golden();
        b[pos] ^= mask;
        prop_assert!(decode_frame(&b).is_err());
    }
}
