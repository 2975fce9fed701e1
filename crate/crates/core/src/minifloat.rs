//! Bit-exact codecs for the narrow floating-point element types used in MX
//! blocks: E4M3, E5M2 (FP8), E2M3, E3M2 (FP6) and E2M1 (FP4), plus the
//! BF16 rounding step needed by the emulated MMA path.
//!
//! Bit layout is sign | exponent | mantissa with subnormals at exponent
//! field 0. E5M2 follows IEEE 754 special-value conventions; E4M3 reserves
//! only the all-ones magnitude for NaN; the FP6/FP4 types are finite-only.

use crate::error::{MxError, Result};

/// The five MX element data types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FormatKind {
    E4M3,
    E5M2,
    E2M3,
    E3M2,
    E2M1,
}

/// How a format encodes (or avoids) NaN and infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecialConvention {
    /// IEEE 754: max exponent field reserved for Inf (zero mantissa) and NaN.
    Ieee,
    /// Finite except one magnitude: all-ones exponent and mantissa is NaN.
    FiniteOnlyOneNan,
    /// Every bit pattern decodes to a finite value.
    FiniteOnly,
}

/// Descriptor of an ExMy element type.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniFloatFormat {
    pub name: FormatKind,
    pub exp_bits: u32,
    pub man_bits: u32,
    pub bias: i32,
    pub special_convention: SpecialConvention,
    /// Largest finite magnitude.
    pub destmax: f64,
    /// Smallest positive (subnormal) magnitude.
    pub min_subnormal: f64,
}

const E4M3: MiniFloatFormat = MiniFloatFormat {
    name: FormatKind::E4M3,
    exp_bits: 4,
    man_bits: 3,
    bias: 7,
    special_convention: SpecialConvention::FiniteOnlyOneNan,
    destmax: 448.0,
    min_subnormal: 0.001953125, // 2^-9
};

const E5M2: MiniFloatFormat = MiniFloatFormat {
    name: FormatKind::E5M2,
    exp_bits: 5,
    man_bits: 2,
    bias: 15,
    special_convention: SpecialConvention::Ieee,
    destmax: 57344.0,
    min_subnormal: 0.0000152587890625, // 2^-16
};

const E2M3: MiniFloatFormat = MiniFloatFormat {
    name: FormatKind::E2M3,
    exp_bits: 2,
    man_bits: 3,
    bias: 1,
    special_convention: SpecialConvention::FiniteOnly,
    destmax: 7.5,
    min_subnormal: 0.125, // 2^-3
};

const E3M2: MiniFloatFormat = MiniFloatFormat {
    name: FormatKind::E3M2,
    exp_bits: 3,
    man_bits: 2,
    bias: 3,
    special_convention: SpecialConvention::FiniteOnly,
    destmax: 28.0,
    min_subnormal: 0.0625, // 2^-4: consistent with the 8.8-binade dynamic range
};

const E2M1: MiniFloatFormat = MiniFloatFormat {
    name: FormatKind::E2M1,
    exp_bits: 2,
    man_bits: 1,
    bias: 1,
    special_convention: SpecialConvention::FiniteOnly,
    destmax: 6.0,
    min_subnormal: 0.5, // 2^-1
};

impl FormatKind {
    /// All element formats, in reference-table order.
    pub const ALL: [FormatKind; 5] = [
        FormatKind::E4M3,
        FormatKind::E5M2,
        FormatKind::E2M3,
        FormatKind::E3M2,
        FormatKind::E2M1,
    ];

    pub fn format(self) -> &'static MiniFloatFormat {
        match self {
            FormatKind::E4M3 => &E4M3,
            FormatKind::E5M2 => &E5M2,
            FormatKind::E2M3 => &E2M3,
            FormatKind::E3M2 => &E3M2,
            FormatKind::E2M1 => &E2M1,
        }
    }

    /// Total bit width including the sign bit.
    pub fn width(self) -> u32 {
        let f = self.format();
        1 + f.exp_bits + f.man_bits
    }

    pub fn destmax(self) -> f64 {
        self.format().destmax
    }
}

impl std::fmt::Display for FormatKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FormatKind::E4M3 => "e4m3",
            FormatKind::E5M2 => "e5m2",
            FormatKind::E2M3 => "e2m3",
            FormatKind::E3M2 => "e3m2",
            FormatKind::E2M1 => "e2m1",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for FormatKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "e4m3" => Ok(FormatKind::E4M3),
            "e5m2" => Ok(FormatKind::E5M2),
            "e2m3" => Ok(FormatKind::E2M3),
            "e3m2" => Ok(FormatKind::E3M2),
            "e2m1" => Ok(FormatKind::E2M1),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

impl MiniFloatFormat {
    pub fn width(&self) -> u32 {
        1 + self.exp_bits + self.man_bits
    }

    /// Smallest positive normal magnitude, 2^(1-bias).
    pub fn min_normal(&self) -> f64 {
        exp2i(1 - self.bias)
    }

    /// Dynamic range in binades: log2(destmax / min_subnormal).
    pub fn binades(&self) -> f64 {
        (self.destmax / self.min_subnormal).log2()
    }

    /// Representable magnitudes per binade in the normal range.
    pub fn samples_per_binade(&self) -> u32 {
        1 << self.man_bits
    }

    /// Unbiased exponent of destmax, floor(log2(destmax)).
    pub fn destmax_exponent(&self) -> i32 {
        ((self.destmax.to_bits() >> 52) & 0x7ff) as i32 - 1023
    }

    /// Fractional mantissa of destmax: destmax / 2^floor(log2 destmax) - 1.
    pub fn destmax_fraction(&self) -> f64 {
        self.destmax / exp2i(self.destmax_exponent()) - 1.0
    }

    /// The canonical NaN code magnitude, if the format can encode NaN.
    pub fn nan_code(&self) -> Option<u8> {
        match self.special_convention {
            SpecialConvention::FiniteOnly => None,
            // All-ones exponent and mantissa: E4M3's single NaN magnitude,
            // and a valid IEEE NaN pattern for E5M2.
            _ => Some(((1 << (self.exp_bits + self.man_bits)) - 1) as u8),
        }
    }

    /// Largest magnitude index (sign bit clear) that decodes to a finite value.
    pub(crate) fn max_finite_magnitude(&self) -> u8 {
        let all = (1u32 << (self.exp_bits + self.man_bits)) - 1;
        let idx = match self.special_convention {
            SpecialConvention::FiniteOnly => all,
            SpecialConvention::FiniteOnlyOneNan => all - 1,
            // Back off the whole Inf/NaN exponent row.
            SpecialConvention::Ieee => all - (1 << self.man_bits),
        };
        idx as u8
    }
}

/// Exact power of two for exponents in the normal binary64 range.
pub(crate) fn exp2i(e: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// One element's bit pattern tagged with its format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementCode {
    bits: u8,
    format: FormatKind,
}

impl ElementCode {
    pub fn new(bits: u8, format: FormatKind) -> Result<Self> {
        if u32::from(bits) >= 1 << format.width() {
            return Err(MxError::InvalidCode { bits, format });
        }
        Ok(ElementCode { bits, format })
    }

    pub fn bits(self) -> u8 {
        self.bits
    }

    pub fn format(self) -> FormatKind {
        self.format
    }

    /// Sign-flipped code (total: NaN codes flip their sign bit too).
    pub fn negated(self) -> Self {
        let w = self.format.width();
        ElementCode {
            bits: self.bits ^ (1 << (w - 1)),
            format: self.format,
        }
    }

    pub fn is_nan(self) -> bool {
        self.decode().is_nan()
    }

    /// Decode the code to its exact binary64 value (or NaN / ±Inf for the
    /// formats that encode them).
    pub fn decode(self) -> f64 {
        let f = self.format.format();
        let w = f.width();
        let sign = (self.bits >> (w - 1)) & 1;
        let exp_field = u32::from(self.bits >> f.man_bits) & ((1 << f.exp_bits) - 1);
        let man_field = u32::from(self.bits) & ((1 << f.man_bits) - 1);
        let exp_all_ones = (1u32 << f.exp_bits) - 1;
        let man_all_ones = (1u32 << f.man_bits) - 1;

        match f.special_convention {
            SpecialConvention::Ieee if exp_field == exp_all_ones => {
                return if man_field != 0 {
                    f64::NAN
                } else if sign == 1 {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                };
            }
            SpecialConvention::FiniteOnlyOneNan
                if exp_field == exp_all_ones && man_field == man_all_ones =>
            {
                return f64::NAN;
            }
            _ => {}
        }

        let sgn = if sign == 1 { -1.0 } else { 1.0 };
        let frac = f64::from(man_field) / f64::from(1u32 << f.man_bits);
        let mag = if exp_field == 0 {
            exp2i(1 - f.bias) * frac
        } else {
            exp2i(exp_field as i32 - f.bias) * (1.0 + frac)
        };
        sgn * mag
    }
}

/// Saturating round-to-nearest-ties-even quantization of a finite binary64
/// value to the nearest representable code.
///
/// Magnitudes above destmax clamp to ±destmax; magnitudes below half the
/// minimum subnormal round to ±0 (the sign of zero is preserved).
pub fn quantize(value: f64, format: FormatKind) -> Result<ElementCode> {
    if !value.is_finite() {
        return Err(MxError::NonFiniteElement(value));
    }
    let f = format.format();
    let sign_bit = u8::from(value.is_sign_negative()) << (f.width() - 1);
    let magnitude = quantize_magnitude(value.abs(), f);
    Ok(ElementCode {
        bits: sign_bit | magnitude,
        format,
    })
}

/// Round a non-negative finite magnitude to its code index.
///
/// All arithmetic is exact: the input is scaled by a power of two so that
/// the rounding grid has unit spacing, and binary64 represents every
/// half-way point of these <= 8-bit formats exactly.
fn quantize_magnitude(x: f64, f: &MiniFloatFormat) -> u8 {
    if x == 0.0 {
        return 0;
    }
    let min_norm_exp = 1 - f.bias;
    let mut e = if x < f.min_normal() {
        min_norm_exp
    } else {
        floor_log2(x)
    };
    // x / 2^(e - man_bits): exact power-of-two scaling.
    let mut ticks = (x * exp2i(f.man_bits as i32 - e)).round_ties_even() as u64;
    if ticks == 0 {
        return 0;
    }
    let one = 1u64 << f.man_bits;
    let index = if e == min_norm_exp && ticks <= one {
        // Subnormal range (or exactly the smallest normal).
        ticks
    } else {
        if ticks == one << 1 {
            // Rounded up into the next binade.
            e += 1;
            ticks = one;
        }
        let exp_field = (e + f.bias) as u64;
        (exp_field << f.man_bits) | (ticks - one)
    };
    index.min(u64::from(f.max_finite_magnitude())) as u8
}

fn floor_log2(x: f64) -> i32 {
    debug_assert!(x.is_finite() && x >= f64::MIN_POSITIVE);
    ((x.to_bits() >> 52) & 0x7ff) as i32 - 1023
}

/// Round a binary32 value to BF16 precision (8-bit mantissa) with
/// round-to-nearest-ties-even, returned widened to binary32.
///
/// NaN propagates unchanged; overflow follows IEEE and produces infinity.
pub fn round_bf16(value: f32) -> f32 {
    if value.is_nan() {
        return value;
    }
    let bits = value.to_bits();
    let rounded = (bits + 0x7fff + ((bits >> 16) & 1)) >> 16;
    f32::from_bits(rounded << 16)
}

/// Largest finite BF16 magnitude, 2^127 * (2 - 2^-7).
pub const BF16_MAX: f32 = 3.3895314e38;
