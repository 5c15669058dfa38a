use std::fmt;

use serde::{Deserialize, Serialize};

/// Runtime type tag of a [`Value`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueTag {
    Int,
    Float,
}

/// A tagged 64-bit value.
///
/// Equality and hashing are on the raw bit pattern, so `-0.0 != 0.0` and a
/// NaN compares equal to an identically encoded NaN. Everything downstream
/// (trace diffing, ACL clean-overwrite checks) wants exactly this.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Value {
    pub tag: ValueTag,
    #[serde(with = "hex_bits")]
    pub bits: u64,
}

impl Value {
    pub const fn int(v: i64) -> Self {
        Self {
            tag: ValueTag::Int,
            bits: v as u64,
        }
    }

    pub fn float(v: f64) -> Self {
        Self {
            tag: ValueTag::Float,
            bits: v.to_bits(),
        }
    }

    pub const fn from_bits(tag: ValueTag, bits: u64) -> Self {
        Self { tag, bits }
    }

    pub fn is_int(&self) -> bool {
        self.tag == ValueTag::Int
    }

    pub fn is_float(&self) -> bool {
        self.tag == ValueTag::Float
    }

    pub fn as_int(&self) -> Option<i64> {
        self.is_int().then_some(self.bits as i64)
    }

    pub fn as_float(&self) -> Option<f64> {
        self.is_float().then(|| f64::from_bits(self.bits))
    }

    /// Numeric view used for error magnitudes and tolerance checks.
    pub fn to_f64(&self) -> f64 {
        match self.tag {
            ValueTag::Int => self.bits as i64 as f64,
            ValueTag::Float => f64::from_bits(self.bits),
        }
    }

    /// Truthiness for conditional branches: any non-zero bit pattern.
    pub fn is_truthy(&self) -> bool {
        match self.tag {
            ValueTag::Int => self.bits != 0,
            ValueTag::Float => f64::from_bits(self.bits) != 0.0,
        }
    }
}

/// XOR a single bit of the value's 64-bit pattern. The tag is unchanged.
///
/// Panics if `bit > 63`.
pub fn flip_bit(value: Value, bit: u8) -> Value {
    assert!(bit < 64, "bit position {bit} out of range");
    Value {
        tag: value.tag,
        bits: value.bits ^ (1u64 << bit),
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tag {
            ValueTag::Int => write!(f, "{}", self.bits as i64),
            ValueTag::Float => {
                let v = f64::from_bits(self.bits);
                if v.is_finite() {
                    // `{:?}` always keeps a decimal point or exponent, so the
                    // literal re-parses as a float.
                    write!(f, "{v:?}")
                } else {
                    write!(f, "f0x{:016x}", self.bits)
                }
            }
        }
    }
}

mod hex_bits {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bits: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{bits:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        let digits = s.strip_prefix("0x").unwrap_or(&s);
        u64::from_str_radix(digits, 16).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flip_low_bit_of_zero() {
        assert_eq!(flip_bit(Value::int(0), 0), Value::int(1));
    }

    #[test]
    fn flip_bit_62_of_zero_float_is_two() {
        // 0x4000_0000_0000_0000 encodes 2.0: sign 0, biased exponent 1024, mantissa 0.
        let flipped = flip_bit(Value::float(0.0), 62);
        assert_eq!(flipped.bits, 0x4000_0000_0000_0000);
        assert_eq!(flipped.as_float(), Some(2.0));
    }

    #[test]
    fn equality_is_bitwise() {
        assert_ne!(Value::float(0.0), Value::float(-0.0));
        assert_eq!(Value::float(f64::NAN), Value::float(f64::NAN));
    }

    #[test]
    fn display_round_trips_floats() {
        for v in [1.0, -0.004373951680278, 1e-300, 123456.789] {
            let s = Value::float(v).to_string();
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    proptest! {
        #[test]
        fn flip_is_an_involution(bits in any::<u64>(), float in any::<bool>(), bit in 0u8..64) {
            let tag = if float { ValueTag::Float } else { ValueTag::Int };
            let v = Value::from_bits(tag, bits);
            prop_assert_eq!(flip_bit(flip_bit(v, bit), bit), v);
        }

        #[test]
        fn flip_changes_exactly_one_bit(bits in any::<u64>(), bit in 0u8..64) {
            let v = Value::from_bits(ValueTag::Int, bits);
            let diff = v.bits ^ flip_bit(v, bit).bits;
            prop_assert_eq!(diff.count_ones(), 1);
            prop_assert_eq!(diff, 1u64 << bit);
        }

        #[test]
        fn float_bits_round_trip(x in any::<f64>()) {
            let v = Value::float(x);
            prop_assert_eq!(v.as_float().unwrap().to_bits(), x.to_bits());
        }
    }
}
