//! MXT: a bit-exact binary container for raw binary32 tensors and MX
//! tensors, so runs are reproducible and comparable across implementations.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset size field
//! 0      4    magic "MXT1"
//! 4      2    version (1)
//! 6      1    kind: 0 = raw f32, 1 = mx
//! 7      1    format: Table-order element format (0 e4m3, 1 e5m2, 2 e2m3,
//!             3 e3m2, 4 e2m1); 255 for raw
//! 8      1    axis: 0 row, 1 col (0 for raw)
//! 9      1    scale mode: 0 up, 1 ocp-floor (0 for raw)
//! 10     8    rows
//! 18     8    cols
//! 26     6    zero padding
//! 32     ...  payload
//! ```
//!
//! Raw payload: rows*cols binary32 values, row-major. MX payload: one scale
//! byte per block, then one code byte per element, row-major (FP6/FP4 codes
//! occupy one byte each, low bits significant).

use crate::block_quant::{Axis, MxTensor};
use crate::error::{MxError, Result};
use crate::minifloat::FormatKind;
use crate::scaling::{ScaleByte, ScaleRoundingMode};
use ndarray::Array2;
use std::fs;
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"MXT1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;

const KIND_RAW: u8 = 0;
const KIND_MX: u8 = 1;
const FORMAT_RAW: u8 = 255;

/// Contents of an MXT file.
#[derive(Debug, Clone, PartialEq)]
pub enum MxtPayload {
    Raw(Array2<f32>),
    Mx(MxTensor),
}

fn format_byte(format: FormatKind) -> u8 {
    match format {
        FormatKind::E4M3 => 0,
        FormatKind::E5M2 => 1,
        FormatKind::E2M3 => 2,
        FormatKind::E3M2 => 3,
        FormatKind::E2M1 => 4,
    }
}

fn format_from_byte(value: u8) -> Result<FormatKind> {
    match value {
        0 => Ok(FormatKind::E4M3),
        1 => Ok(FormatKind::E5M2),
        2 => Ok(FormatKind::E2M3),
        3 => Ok(FormatKind::E3M2),
        4 => Ok(FormatKind::E2M1),
        value => Err(MxError::UnsupportedFormat {
            field: "format",
            value,
        }),
    }
}

fn axis_byte(axis: Axis) -> u8 {
    match axis {
        Axis::Row => 0,
        Axis::Col => 1,
    }
}

fn axis_from_byte(value: u8) -> Result<Axis> {
    match value {
        0 => Ok(Axis::Row),
        1 => Ok(Axis::Col),
        value => Err(MxError::UnsupportedFormat {
            field: "axis",
            value,
        }),
    }
}

fn mode_byte(mode: ScaleRoundingMode) -> u8 {
    match mode {
        ScaleRoundingMode::RoundUp => 0,
        ScaleRoundingMode::OcpFloor => 1,
    }
}

fn mode_from_byte(value: u8) -> Result<ScaleRoundingMode> {
    match value {
        0 => Ok(ScaleRoundingMode::RoundUp),
        1 => Ok(ScaleRoundingMode::OcpFloor),
        value => Err(MxError::UnsupportedFormat {
            field: "scale_mode",
            value,
        }),
    }
}

fn header(kind: u8, format: u8, axis: u8, mode: u8, rows: u64, cols: u64) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(&MAGIC);
    h[4..6].copy_from_slice(&VERSION.to_le_bytes());
    h[6] = kind;
    h[7] = format;
    h[8] = axis;
    h[9] = mode;
    h[10..18].copy_from_slice(&rows.to_le_bytes());
    h[18..26].copy_from_slice(&cols.to_le_bytes());
    h
}

/// Serialize a raw binary32 tensor.
pub fn encode_raw(t: &Array2<f32>) -> Result<Vec<u8>> {
    let (rows, cols) = t.dim();
    if rows == 0 || cols == 0 {
        return Err(MxError::EmptyTensor);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + rows * cols * 4);
    out.extend_from_slice(&header(KIND_RAW, FORMAT_RAW, 0, 0, rows as u64, cols as u64));
    for r in 0..rows {
        for c in 0..cols {
            out.extend_from_slice(&t[(r, c)].to_le_bytes());
        }
    }
    Ok(out)
}

/// Serialize an MX tensor.
pub fn encode_mx(q: &MxTensor) -> Vec<u8> {
    let mut out =
        Vec::with_capacity(HEADER_LEN + q.scales().len() + q.code_bits().len());
    out.extend_from_slice(&header(
        KIND_MX,
        format_byte(q.format()),
        axis_byte(q.axis()),
        mode_byte(q.mode()),
        q.rows() as u64,
        q.cols() as u64,
    ));
    out.extend(q.scales().iter().map(|s| s.byte()));
    out.extend_from_slice(q.code_bits());
    out
}

/// Parse an MXT byte stream, validating magic, version, enum bytes, and
/// exact payload length arithmetic.
pub fn decode(bytes: &[u8]) -> Result<MxtPayload> {
    if bytes.len() < HEADER_LEN {
        return Err(MxError::LengthMismatch {
            field: "header",
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let mut found = [0u8; 4];
    found.copy_from_slice(&bytes[0..4]);
    if found != MAGIC {
        return Err(MxError::BadMagic { found });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(MxError::UnsupportedVersion(version));
    }
    let kind = bytes[6];
    let rows = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[18..26].try_into().unwrap());
    if rows == 0 || cols == 0 {
        return Err(MxError::EmptyTensor);
    }
    let n_elements = rows
        .checked_mul(cols)
        .ok_or(MxError::LengthMismatch {
            field: "rows*cols",
            expected: u64::MAX,
            found: 0,
        })? as usize;
    let payload = &bytes[HEADER_LEN..];

    match kind {
        KIND_RAW => {
            let expected = n_elements as u64 * 4;
            if payload.len() as u64 != expected {
                return Err(MxError::LengthMismatch {
                    field: "raw payload",
                    expected,
                    found: payload.len() as u64,
                });
            }
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Array2::from_shape_vec((rows as usize, cols as usize), data)
                .expect("length checked above");
            Ok(MxtPayload::Raw(t))
        }
        KIND_MX => {
            let format = format_from_byte(bytes[7])?;
            let axis = axis_from_byte(bytes[8])?;
            let mode = mode_from_byte(bytes[9])?;
            let n_scales =
                MxTensor::expected_scale_count(rows as usize, cols as usize, axis);
            let expected = (n_scales + n_elements) as u64;
            if payload.len() as u64 != expected {
                return Err(MxError::LengthMismatch {
                    field: "mx payload",
                    expected,
                    found: payload.len() as u64,
                });
            }
            let scales: Vec<ScaleByte> = payload[..n_scales]
                .iter()
                .map(|&b| ScaleByte::new(b))
                .collect();
            let codes = payload[n_scales..].to_vec();
            let q = MxTensor::from_parts(
                rows as usize,
                cols as usize,
                axis,
                format,
                mode,
                codes,
                scales,
            )?;
            Ok(MxtPayload::Mx(q))
        }
        value => Err(MxError::UnsupportedFormat {
            field: "kind",
            value,
        }),
    }
}

pub fn write_raw<P: AsRef<Path>>(path: P, t: &Array2<f32>) -> Result<()> {
    fs::write(path, encode_raw(t)?)?;
    Ok(())
}

pub fn write_mx<P: AsRef<Path>>(path: P, q: &MxTensor) -> Result<()> {
    fs::write(path, encode_mx(q))?;
    Ok(())
}

pub fn read<P: AsRef<Path>>(path: P) -> Result<MxtPayload> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block_quant::quantize_tensor;
    use ndarray::Array2;

    fn sample_raw() -> Array2<f32> {
        Array2::from_shape_fn((5, 37), |(i, j)| (i as f32 + 1.0) * 0.5 - j as f32 * 0.25)
    }

    #[test]
    fn raw_round_trip_is_byte_identical() {
        let t = sample_raw();
        let bytes = encode_raw(&t).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 5 * 37 * 4);
        let MxtPayload::Raw(back) = decode(&bytes).unwrap() else {
            panic!("expected raw payload");
        };
        assert_eq!(back, t);
        assert_eq!(encode_raw(&back).unwrap(), bytes);
    }

    #[test]
    fn mx_round_trip_is_byte_identical() {
        let t = sample_raw();
        let (q, _) = quantize_tensor(
            t.view(),
            Axis::Col,
            FormatKind::E2M1,
            ScaleRoundingMode::OcpFloor,
        )
        .unwrap();
        let bytes = encode_mx(&q);
        let MxtPayload::Mx(back) = decode(&bytes).unwrap() else {
            panic!("expected mx payload");
        };
        assert_eq!(back, q);
        assert_eq!(encode_mx(&back), bytes);
    }

    #[test]
    fn nan_payloads_round_trip_bitwise() {
        let mut t = sample_raw();
        t[(0, 0)] = f32::from_bits(0x7fc0_dead); // NaN with payload
        t[(1, 1)] = f32::NEG_INFINITY;
        let bytes = encode_raw(&t).unwrap();
        let MxtPayload::Raw(back) = decode(&bytes).unwrap() else {
            panic!()
        };
        assert_eq!(back[(0, 0)].to_bits(), 0x7fc0_dead);
        assert_eq!(back[(1, 1)], f32::NEG_INFINITY);
    }

    #[test]
    fn bad_magic() {
        let t = sample_raw();
        let mut bytes = encode_raw(&t).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(MxError::BadMagic { .. })));
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = encode_raw(&sample_raw()).unwrap();
        bytes[4] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(MxError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn unsupported_format_byte() {
        let t = sample_raw();
        let (q, _) = quantize_tensor(
            t.view(),
            Axis::Row,
            FormatKind::E4M3,
            ScaleRoundingMode::RoundUp,
        )
        .unwrap();
        let mut bytes = encode_mx(&q);
        bytes[7] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(MxError::UnsupportedFormat {
                field: "format",
                value: 9
            })
        ));
    }

    #[test]
    fn truncated_and_trailing_bytes_are_length_mismatches() {
        let bytes = encode_raw(&sample_raw()).unwrap();
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            decode(truncated),
            Err(MxError::LengthMismatch { .. })
        ));
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(
            decode(&trailing),
            Err(MxError::LengthMismatch { .. })
        ));
        assert!(matches!(
            decode(&bytes[..10]),
            Err(MxError::LengthMismatch { field: "header", .. })
        ));
    }

    #[test]
    fn invalid_code_bits_rejected() {
        let t = Array2::from_elem((1, 2), 1.0f32);
        let (q, _) = quantize_tensor(
            t.view(),
            Axis::Row,
            FormatKind::E2M1,
            ScaleRoundingMode::RoundUp,
        )
        .unwrap();
        let mut bytes = encode_mx(&q);
        let last = bytes.len() - 1;
        bytes[last] = 0xf0; // out of range for a 4-bit code
        assert!(matches!(decode(&bytes), Err(MxError::InvalidCode { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.mxt");
        let t = sample_raw();
        write_raw(&path, &t).unwrap();
        let MxtPayload::Raw(back) = read(&path).unwrap() else {
            panic!()
        };
        assert_eq!(back, t);
    }

    #[test]
    fn header_is_32_bytes_and_fixed() {
        let t = Array2::from_elem((1, 1), 0.0f32);
        let bytes = encode_raw(&t).unwrap();
        assert_eq!(&bytes[..4], b"MXT1");
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        assert_eq!(&bytes[26..32], &[0u8; 6]);
    }
}
