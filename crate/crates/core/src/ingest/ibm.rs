//! IBM System/360 hexadecimal floating point, as stored in SAS Transport files.
//!
//! Layout (big endian): bit 0 sign, bits 1-7 excess-64 base-16 exponent,
//! bits 8-63 a 56-bit fraction `0.f` in base 16.

/// Decodes eight big-endian IBM hex-float bytes into an IEEE double.
///
/// The 56-bit fraction is rounded once (to nearest, ties to even) into the
/// 53-bit IEEE significand. Every IBM value lies inside the normal IEEE
/// range, so the decode never overflows or underflows.
pub fn ibm_to_ieee(bytes: [u8; 8]) -> f64 {
    let raw = u64::from_be_bytes(bytes);
    let fraction = raw & 0x00FF_FFFF_FFFF_FFFF;
    if fraction == 0 {
        return if raw >> 63 == 1 { -0.0 } else { 0.0 };
    }
    let exponent = ((raw >> 56) & 0x7F) as i32;
    let magnitude = fraction as f64 * pow2(4 * (exponent - 64) - 56);
    if raw >> 63 == 1 {
        -magnitude
    } else {
        magnitude
    }
}

/// Outcome of an IEEE → IBM conversion that could not be represented exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IbmClamp {
    /// Exact conversion.
    None,
    /// Magnitude exceeded the IBM range; clamped to the largest IBM value.
    Overflow,
    /// Magnitude below the smallest IBM normal; flushed to zero.
    Underflow,
}

/// Encodes an IEEE double as IBM hex float.
///
/// Finite doubles inside the IBM range round-trip exactly: hex normalisation
/// loses at most three leading bits of the 56-bit fraction, leaving room for
/// all 53 IEEE significand bits. Infinities and out-of-range magnitudes clamp
/// to the largest IBM magnitude. NaN encodes as the SAS missing value `.`.
pub fn ieee_to_ibm(value: f64) -> ([u8; 8], IbmClamp) {
    if value.is_nan() {
        return (MISSING_DOT, IbmClamp::None);
    }
    if value == 0.0 {
        return ([0; 8], IbmClamp::None);
    }
    let sign: u64 = if value.is_sign_negative() { 1 << 63 } else { 0 };
    if value.is_infinite() {
        return ((sign | IBM_MAX).to_be_bytes(), IbmClamp::Overflow);
    }

    let bits = value.abs().to_bits();
    let biased = ((bits >> 52) & 0x7FF) as i32;
    // value = significand * 2^exp2, significand has 53 bits (subnormals are
    // far below the IBM range and flush to zero below).
    let (significand, exp2) = if biased == 0 {
        (bits & ((1 << 52) - 1), -1074)
    } else {
        ((bits & ((1 << 52) - 1)) | (1 << 52), biased - 1075)
    };

    // Find hex exponent e with value = 0.f * 16^e, 1/16 <= 0.f < 1.
    // value = significand * 2^exp2 with significand in [2^52, 2^53).
    let top_bit = 63 - significand.leading_zeros() as i32; // 52 for normals
    let binary_exp = exp2 + top_bit + 1; // value in [2^(binary_exp-1), 2^binary_exp)
    let hex_exp = binary_exp.div_euclid(4) + if binary_exp.rem_euclid(4) == 0 { 0 } else { 1 };
    let biased_hex = hex_exp + 64;
    if biased_hex > 127 {
        return ((sign | IBM_MAX).to_be_bytes(), IbmClamp::Overflow);
    }
    if biased_hex < 0 {
        return ([0; 8], IbmClamp::Underflow);
    }
    // fraction = value / 16^hex_exp * 2^56 = significand * 2^(exp2 + 56 - 4*hex_exp)
    let shift = exp2 + 56 - 4 * hex_exp;
    let fraction = if shift >= 0 {
        significand << shift
    } else {
        // Only reachable for tiny values that lose bits; truncate.
        significand >> (-shift)
    };
    if fraction == 0 {
        return ([0; 8], IbmClamp::Underflow);
    }
    let raw = sign | ((biased_hex as u64) << 56) | (fraction & 0x00FF_FFFF_FFFF_FFFF);
    (raw.to_be_bytes(), IbmClamp::None)
}

const IBM_MAX: u64 = 0x7FFF_FFFF_FFFF_FFFF;

/// SAS standard missing value `.` in transport encoding.
pub const MISSING_DOT: [u8; 8] = [0x2E, 0, 0, 0, 0, 0, 0, 0];

/// Returns true when the bytes carry a SAS missing value: `.`, `._` or `.A`-`.Z`
/// (first byte 0x2E, 0x5F or 0x41-0x5A followed by a zero fraction).
pub fn is_sas_missing(bytes: &[u8]) -> bool {
    let Some((&first, rest)) = bytes.split_first() else {
        return false;
    };
    let tag = first == 0x2E || first == 0x5F || (0x41..=0x5A).contains(&first);
    tag && rest.iter().all(|&b| b == 0)
}

fn pow2(exp: i32) -> f64 {
    // Exponents reached here lie in [-316, 196], well inside the normal range.
    f64::from_bits(((exp + 1023) as u64) << 52)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_decodes_to_zero() {
        assert_eq!(ibm_to_ieee([0; 8]), 0.0);
    }

    #[test]
    fn hand_decoded_values() {
        assert_eq!(ibm_to_ieee([0x41, 0x10, 0, 0, 0, 0, 0, 0]), 1.0);
        assert_eq!(ibm_to_ieee([0xC1, 0x20, 0, 0, 0, 0, 0, 0]), -2.0);
        // 0.1 in IBM: 0x40 19 99 99 99 99 99 9A
        let tenth = ibm_to_ieee([0x40, 0x19, 0x99, 0x99, 0x99, 0x99, 0x99, 0x9A]);
        assert!((tenth - 0.1).abs() < 1e-16);
        // 100 = 0x64 = 0.64 (hex) * 16^2
        assert_eq!(ibm_to_ieee([0x42, 0x64, 0, 0, 0, 0, 0, 0]), 100.0);
    }

    #[test]
    fn powers_of_sixteen_are_exact() {
        for e in -60..60 {
            let expected = 16f64.powi(e);
            // 16^e = 0.1(hex) * 16^(e+1)
            let biased = (e + 1 + 64) as u8;
            assert_eq!(ibm_to_ieee([biased, 0x10, 0, 0, 0, 0, 0, 0]), expected, "16^{e}");
        }
    }

    #[test]
    fn encode_matches_hand_values() {
        assert_eq!(ieee_to_ibm(1.0).0, [0x41, 0x10, 0, 0, 0, 0, 0, 0]);
        assert_eq!(ieee_to_ibm(-2.0).0, [0xC1, 0x20, 0, 0, 0, 0, 0, 0]);
        assert_eq!(ieee_to_ibm(100.0).0, [0x42, 0x64, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn overflow_clamps() {
        let (bytes, clamp) = ieee_to_ibm(1e300);
        assert_eq!(clamp, IbmClamp::Overflow);
        assert!(ibm_to_ieee(bytes) > 7e75);
        let (bytes, clamp) = ieee_to_ibm(f64::NEG_INFINITY);
        assert_eq!(clamp, IbmClamp::Overflow);
        assert!(ibm_to_ieee(bytes) < -7e75);
        assert_eq!(ieee_to_ibm(1e-300).1, IbmClamp::Underflow);
    }

    #[test]
    fn missing_sentinels() {
        assert!(is_sas_missing(&MISSING_DOT));
        assert!(is_sas_missing(&[0x41, 0, 0, 0, 0, 0, 0, 0]));
        assert!(is_sas_missing(&[0x5F, 0, 0, 0, 0, 0, 0, 0]));
        assert!(!is_sas_missing(&[0x41, 0x10, 0, 0, 0, 0, 0, 0]));
        assert!(!is_sas_missing(&[0; 8]));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn roundtrip_in_range(v in prop::num::f64::NORMAL) {
                prop_assume!(v.abs() > 1e-70 && v.abs() < 1e70);
                let (bytes, clamp) = ieee_to_ibm(v);
                prop_assert_eq!(clamp, IbmClamp::None);
                prop_assert_eq!(ibm_to_ieee(bytes).to_bits(), v.to_bits());
            }

            #[test]
            fn monotone_on_positive_normalized(
                ea in 1u64..127, fa in 0x10_0000_0000_0000u64..0x100_0000_0000_0000,
                eb in 1u64..127, fb in 0x10_0000_0000_0000u64..0x100_0000_0000_0000,
            ) {
                // Normalized positives order like their raw bit patterns.
                let ra = (ea << 56) | fa;
                let rb = (eb << 56) | fb;
                let (lo, hi) = if ra <= rb { (ra, rb) } else { (rb, ra) };
                prop_assert!(ibm_to_ieee(lo.to_be_bytes()) <= ibm_to_ieee(hi.to_be_bytes()));
            }
        }
    }
}
