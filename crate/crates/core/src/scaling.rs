//! Per-block UE8M0 scale computation from a block's amax.
//!
//! Two rounding modes are supported: round-up of the exponent of
//! amax/destmax toward +inf (computed bit-exactly on the binary32 ratio,
//! never through a log2 call), and the OCP floor rule which keeps the
//! largest power of two <= amax / largest power of two <= destmax.

use crate::error::{MxError, Result};
use crate::minifloat::{exp2i, FormatKind};

/// A UE8M0 scale: byte b in [0, 254] encodes 2^(b - 127); byte 255 is NaN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScaleByte(u8);

pub const SCALE_BIAS: i32 = 127;

impl ScaleByte {
    pub const NAN: ScaleByte = ScaleByte(255);

    pub fn new(byte: u8) -> Self {
        ScaleByte(byte)
    }

    /// Build from an unbiased exponent in [-127, 127].
    pub fn from_exponent(exp: i32) -> Self {
        debug_assert!((-SCALE_BIAS..=SCALE_BIAS).contains(&exp));
        ScaleByte((exp + SCALE_BIAS) as u8)
    }

    pub fn byte(self) -> u8 {
        self.0
    }

    pub fn is_nan(self) -> bool {
        self.0 == 255
    }

    /// Unbiased exponent, or None for the NaN byte.
    pub fn exponent(self) -> Option<i32> {
        if self.is_nan() {
            None
        } else {
            Some(i32::from(self.0) - SCALE_BIAS)
        }
    }

    /// Decoded scale value: 2^(byte - 127), or NaN for byte 255.
    pub fn decode(self) -> f64 {
        match self.exponent() {
            Some(e) => exp2i(e),
            None => f64::NAN,
        }
    }
}

/// How the scale exponent is rounded when amax/destmax is not a power of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScaleRoundingMode {
    /// Round the exponent up toward +inf, so scaled amax never exceeds destmax.
    RoundUp,
    /// OCP rule: floor(log2 amax) - floor(log2 destmax). Saturates whenever
    /// the mantissa of amax exceeds the mantissa of destmax.
    OcpFloor,
}

impl std::fmt::Display for ScaleRoundingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScaleRoundingMode::RoundUp => "up",
            ScaleRoundingMode::OcpFloor => "ocp-floor",
        })
    }
}

impl std::str::FromStr for ScaleRoundingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "up" => Ok(ScaleRoundingMode::RoundUp),
            "ocp-floor" => Ok(ScaleRoundingMode::OcpFloor),
            other => Err(format!("unknown scale rounding mode {other:?}")),
        }
    }
}

/// Absolute maximum over a block's present elements. NaN if any element is
/// NaN; infinity if any element is infinite.
pub fn block_amax(values: &[f32]) -> f32 {
    let mut amax = 0.0f32;
    for v in values {
        if v.is_nan() {
            return f32::NAN;
        }
        amax = amax.max(v.abs());
    }
    amax
}

/// Compute the UE8M0 scale byte for a block with the given amax.
///
/// amax = 0 yields byte 0 (scale 2^-127) and the caller stores all-zero
/// codes. NaN or Inf amax yields the NaN byte for formats with a NaN
/// encoding and fails with NonRepresentableSpecial for FP6/FP4.
pub fn compute_scale(amax: f32, format: FormatKind, mode: ScaleRoundingMode) -> Result<ScaleByte> {
    if !amax.is_finite() {
        if amax < 0.0 {
            return Err(MxError::InvalidAmax(amax));
        }
        if format.format().nan_code().is_none() {
            return Err(MxError::NonRepresentableSpecial(format));
        }
        return Ok(ScaleByte::NAN);
    }
    if amax < 0.0 {
        return Err(MxError::InvalidAmax(amax));
    }
    if amax == 0.0 {
        return Ok(ScaleByte(0));
    }
    let exp = match mode {
        ScaleRoundingMode::RoundUp => round_up_exponent(amax, format),
        ScaleRoundingMode::OcpFloor => {
            floor_log2_f32(amax) - format.format().destmax_exponent()
        }
    };
    Ok(ScaleByte::from_exponent(exp.clamp(-SCALE_BIAS, SCALE_BIAS)))
}

/// Round-up scale exponent, computed on the bit representation of the
/// binary32 ratio amax/destmax: exponent of the ratio if the mantissa field
/// is zero, exponent + 1 otherwise. Ratios below 2^-127 (including those
/// that underflow the division to zero) clamp to -127.
fn round_up_exponent(amax: f32, format: FormatKind) -> i32 {
    let ratio = amax / format.destmax() as f32;
    let bits = ratio.to_bits();
    let exp_field = (bits >> 23) & 0xff;
    let man_field = bits & 0x7f_ffff;
    if exp_field == 0 {
        // Zero or subnormal ratio. 2^-127 itself is the subnormal with
        // mantissa field 2^22; anything smaller clamps up to 2^-127.
        if man_field < 1 << 22 {
            return -127;
        }
        let floor = man_field.ilog2() as i32 - 149;
        floor + i32::from(!man_field.is_power_of_two())
    } else if exp_field == 0xff {
        // Infinite ratio: unreachable from finite amax, kept for totality.
        127
    } else {
        let floor = exp_field as i32 - 127;
        floor + i32::from(man_field != 0)
    }
}

/// floor(log2 x) for positive finite binary32, including subnormals.
fn floor_log2_f32(x: f32) -> i32 {
    debug_assert!(x > 0.0 && x.is_finite());
    let bits = x.to_bits();
    let exp_field = ((bits >> 23) & 0xff) as i32;
    if exp_field == 0 {
        (bits & 0x7f_ffff).ilog2() as i32 - 149
    } else {
        exp_field - 127
    }
}

/// Whether the OCP floor rule saturates the block holding this amax:
/// true iff the fractional mantissa of amax exceeds that of destmax.
/// Characterizes saturation exactly while the scale exponent is unclamped.
pub fn ocp_floor_saturates(amax: f32, format: FormatKind) -> bool {
    if amax <= 0.0 || !amax.is_finite() {
        return false;
    }
    let fraction = f64::from(amax) / exp2i(floor_log2_f32(amax)) - 1.0;
    fraction > format.format().destmax_fraction()
}
