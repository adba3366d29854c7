//! Fixed 17-significant-digit number output for JSON artifacts.

use serde::Serialize;
use serde::ser::{Error as _, SerializeSeq, Serializer};
use serde_json::value::RawValue;

fn raw(x: f64) -> Result<Box<RawValue>, String> {
    if !x.is_finite() {
        return Err(format!("non-finite number {x}"));
    }
    RawValue::from_string(format!("{x:.16e}")).map_err(|e| e.to_string())
}

/// Serialize one `f64` with 17 significant digits.
pub fn sig17<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    raw(*x).map_err(S::Error::custom)?.serialize(s)
}

/// Serialize a vector of `f64` with 17 significant digits each.
pub fn sig17_vec<S: Serializer>(v: &Vec<f64>, s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&raw(*x).map_err(S::Error::custom)?)?;
    }
    seq.end()
}

/// Serialize an optional `f64` with 17 significant digits, `null` if absent.
pub fn sig17_opt<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => sig17(v, s),
        None => s.serialize_none(),
    }
}
