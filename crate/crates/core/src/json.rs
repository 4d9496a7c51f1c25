//! Canonical JSON helpers shared by every file format the crate writes.
//!
//! Canonical output is compact, has keys in sorted order (every serialized
//! struct declares its fields alphabetically) and carries floats rounded to
//! [`SIGNIFICANT_DIGITS`] significant digits, so equal inputs always produce
//! equal bytes.

use serde::Serializer;
use sha2::{Digest, Sha256};

pub const SIGNIFICANT_DIGITS: usize = 9;

/// Rounds to `digits` significant decimal digits. `-0.0` becomes `0.0`;
/// non-finite values pass through.
pub fn round_sig(value: f64, digits: usize) -> f64 {
    if value == 0.0 {
        return 0.0;
    }
    if !value.is_finite() {
        return value;
    }
    let digits = digits.max(1);
    format!("{:.*e}", digits - 1, value)
        .parse()
        .expect("formatted float parses")
}

pub fn quantize(value: f64) -> f64 {
    round_sig(value, SIGNIFICANT_DIGITS)
}

pub(crate) fn ser_quantized<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(quantize(*v))
}

pub(crate) fn ser_quantized_vec<S: Serializer>(v: &crate::geometry::Vec3, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeTuple;
    let mut t = s.serialize_tuple(3)?;
    for c in v.to_array() {
        t.serialize_element(&quantize(c))?;
    }
    t.end()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
