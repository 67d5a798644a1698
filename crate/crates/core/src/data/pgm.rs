//! Binary PGM (P5) encode/decode and the tensor <-> byte intensity map.
//!
//! Encoding writes `P5\n{w} {h}\n255\n` followed by raw bytes; +1 maps to
//! byte 255 (background), -1 to byte 0 (ink).

use super::GrayImage;
use crate::error::TensorError;
use crate::tensor::{Shape, Tensor};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PgmError {
    #[error("not a P5 file (magic {0:?})")]
    BadMagic(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("maxval {0} unsupported (expected 1..=255)")]
    BadMaxval(u32),
    #[error("pixel payload truncated: expected {expected}, found {found}")]
    Truncated { expected: usize, found: usize },
}

/// Byte for a tensor intensity in [-1, 1].
pub fn unit_to_byte(v: f32) -> u8 {
    (((v + 1.0) * 0.5 * 255.0).round()).clamp(0.0, 255.0) as u8
}

/// Tensor intensity for a byte: 0 -> -1, 255 -> +1.
pub fn byte_to_unit(b: u8) -> f32 {
    b as f32 / 255.0 * 2.0 - 1.0
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Renders a single-channel tensor in [-1, 1] to PGM bytes.
pub fn encode_pgm_tensor(tensor: &Tensor) -> Result<Vec<u8>, TensorError> {
    let img = tensor_to_gray(tensor)?;
    Ok(encode_pgm(&img))
}

pub fn tensor_to_gray(tensor: &Tensor) -> Result<GrayImage, TensorError> {
    let s = tensor.shape();
    if s.n != 1 || s.c != 1 {
        return Err(TensorError::bad_config(
            "encode_pgm",
            format!("expected a single-channel sample, got {s}"),
        ));
    }
    Ok(GrayImage {
        width: s.w,
        height: s.h,
        pixels: tensor.values().iter().map(|&v| unit_to_byte(v)).collect(),
    })
}

pub fn gray_to_tensor(img: &GrayImage) -> Tensor {
    Tensor::from_vec(
        Shape::new(1, 1, img.height, img.width),
        img.pixels.iter().map(|&b| byte_to_unit(b)).collect(),
    )
    .expect("image extents are consistent")
}

fn skip_separators(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        return pos;
    }
}

fn read_number(bytes: &[u8], pos: usize) -> Result<(u32, usize), PgmError> {
    let start = skip_separators(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(PgmError::Header(format!(
            "expected a number at offset {start}"
        )));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("digits are ASCII");
    let value: u64 = text
        .parse()
        .map_err(|_| PgmError::Header(format!("number too large at offset {start}")))?;
    if value > u32::MAX as u64 {
        return Err(PgmError::Header(format!("number too large at offset {start}")));
    }
    Ok((value as u32, end))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let magic = bytes
            .iter()
            .take(2)
            .map(|&b| b as char)
            .collect::<String>();
        return Err(PgmError::BadMagic(magic));
    }
    let (width, pos) = read_number(bytes, 2)?;
    let (height, pos) = read_number(bytes, pos)?;
    let (maxval, pos) = read_number(bytes, pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(PgmError::BadMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(PgmError::Header(format!("degenerate size {width}x{height}")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(PgmError::Header("missing separator before payload".into()));
    }
    let payload = &bytes[pos + 1..];
    let expected = width as usize * height as usize;
    if payload.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let pixels: Vec<u8> = if maxval == 255 {
        payload[..expected].to_vec()
    } else {
        payload[..expected]
            .iter()
            .map(|&b| ((b.min(maxval as u8) as u32 * 255 + maxval / 2) / maxval) as u8)
            .collect()
    };
    Ok(GrayImage {
        width: width as usize,
        height: height as usize,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_background_file() {
        // 2x2 all-background: exact bytes.
        let img = GrayImage::filled(2, 2, 255);
        let bytes = encode_pgm(&img);
        let mut expect = b"P5\n2 2\n255\n".to_vec();
        expect.extend_from_slice(&[0xFF; 4]);
        assert_eq!(bytes, expect);
    }

    #[test]
    fn endpoints_map_exactly() {
        assert_eq!(unit_to_byte(-1.0), 0);
        assert_eq!(unit_to_byte(1.0), 255);
        assert_eq!(byte_to_unit(0), -1.0);
        assert_eq!(byte_to_unit(255), 1.0);
    }

    #[test]
    fn encode_decode_encode_is_idempotent() {
        let img = GrayImage::new(3, 2, vec![0, 17, 128, 200, 255, 42]).unwrap();
        let once = encode_pgm(&img);
        let decoded = decode_pgm(&once).unwrap();
        assert_eq!(encode_pgm(&decoded), once);
    }

    #[test]
    fn tensor_round_trip_within_quantization() {
        let t = Tensor::from_vec(
            Shape::new(1, 1, 2, 2),
            vec![-1.0, -0.333, 0.5, 1.0],
        )
        .unwrap();
        let bytes = encode_pgm_tensor(&t).unwrap();
        let back = gray_to_tensor(&decode_pgm(&bytes).unwrap());
        for (a, b) in t.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn header_with_comment_parses() {
        let mut bytes = b"P5\n# toy\n4 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!((img.width, img.height), (4, 1));
    }

    #[test]
    fn malformed_headers_error() {
        assert!(matches!(decode_pgm(b"P6\n1 1\n255\nx"), Err(PgmError::BadMagic(_))));
        assert!(matches!(
            decode_pgm(b"P5\nx 1\n255\n"),
            Err(PgmError::Header(_))
        ));
        assert!(matches!(
            decode_pgm(b"P5\n2 2\n255\nab"),
            Err(PgmError::Truncated { .. })
        ));
    }

    #[test]
    fn multichannel_tensor_rejected() {
        let t = Tensor::zeros(Shape::new(1, 3, 2, 2));
        assert!(encode_pgm_tensor(&t).is_err());
    }
}
