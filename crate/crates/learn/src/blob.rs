//! Serde helper storing `f64` arrays as base64 little-endian bytes, which
//! keeps model files compact and bit-exact.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer, T: AsRef<[f64]> + ?Sized>(values: &T, s: S) -> Result<S::Ok, S::Error> {
    let bytes: Vec<u8> = values.as_ref().iter().flat_map(|v| v.to_le_bytes()).collect();
    s.serialize_str(&STANDARD.encode(bytes))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    let text = String::deserialize(d)?;
    let bytes = STANDARD.decode(text).map_err(serde::de::Error::custom)?;
    if bytes.len() % 8 != 0 {
        return Err(serde::de::Error::custom("blob length is not a multiple of 8"));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}
