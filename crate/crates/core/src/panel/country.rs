use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// ISO 3166-1 alpha-3 country or territory code.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountryCode([u8; 3]);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid country code {0:?}: expected three uppercase letters")]
pub struct InvalidCountryCode(pub String);

impl CountryCode {
    pub fn new(code: &str) -> Result<Self, InvalidCountryCode> {
        let bytes = code.as_bytes();
        if bytes.len() != 3 || !bytes.iter().all(u8::is_ascii_uppercase) {
            return Err(InvalidCountryCode(code.to_string()));
        }
        Ok(CountryCode([bytes[0], bytes[1], bytes[2]]))
    }

    /// Panics on an invalid literal; meant for constants and tests.
    pub fn lit(code: &str) -> Self {
        Self::new(code).unwrap_or_else(|e| panic!("{e}"))
    }

    /// Code for the `index`-th country in base-26 order: AAA, AAB, ...
    pub fn from_index(index: usize) -> Self {
        assert!(index < 26 * 26 * 26, "country index out of range");
        let letter = |k: usize| b'A' + k as u8;
        CountryCode([letter(index / 676), letter(index / 26 % 26), letter(index % 26)])
    }

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("ascii by construction")
    }
}

pub const SINGAPORE: CountryCode = CountryCode(*b"SGP");

impl FromStr for CountryCode {
    type Err = InvalidCountryCode;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CountryCode::new(s)
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for CountryCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CountryCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        CountryCode::new(&s).map_err(serde::de::Error::custom)
    }
}
