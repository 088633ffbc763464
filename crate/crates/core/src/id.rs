use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Opaque 128-bit device token. Rendered as 32 lowercase hex characters; the
/// ordering of the numeric value matches the lexical ordering of the text.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AnonymousId(u128);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed anonymous id `{0}`: expected 32 lowercase hex characters")]
pub struct ParseIdError(pub String);

impl AnonymousId {
    pub const fn from_u128(raw: u128) -> Self {
        Self(raw)
    }

    pub const fn as_u128(self) -> u128 {
        self.0
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self(rng.random())
    }
}

impl fmt::Display for AnonymousId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl fmt::Debug for AnonymousId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AnonymousId({self})")
    }
}

impl FromStr for AnonymousId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ok = s.len() == 32 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if !ok {
            return Err(ParseIdError(s.to_owned()));
        }
        u128::from_str_radix(s, 16)
            .map(Self)
            .map_err(|_| ParseIdError(s.to_owned()))
    }
}

impl Serialize for AnonymousId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AnonymousId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renders_fixed_width() {
        assert_eq!(
            AnonymousId::from_u128(0xab).to_string(),
            "000000000000000000000000000000ab"
        );
    }

    #[test]
    fn rejects_uppercase_and_short() {
        assert!("ABCDEF00000000000000000000000000"
            .parse::<AnonymousId>()
            .is_err());
        assert!("abc".parse::<AnonymousId>().is_err());
        assert!("+0000000000000000000000000000000"
            .parse::<AnonymousId>()
            .is_err());
    }

    proptest! {
        #[test]
        fn text_order_matches_value_order(a: u128, b: u128) {
            let (ia, ib) = (AnonymousId::from_u128(a), AnonymousId::from_u128(b));
            prop_assert_eq!(ia.cmp(&ib), ia.to_string().cmp(&ib.to_string()));
            prop_assert_eq!(ia.to_string().parse::<AnonymousId>().unwrap(), ia);
        }
    }
}
