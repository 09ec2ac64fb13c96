//! Structured values carried by proposals, events, rows and trace payloads.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A single field value. Floats are deliberately absent: money is carried in
/// integer minor units and percentages as integers, which keeps every
/// serialized trace byte-stable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Text(String),
}

impl Scalar {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Scalar::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Scalar::Text(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Scalar::Bool(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(v) => write!(f, "{v}"),
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Text(v) => f.write_str(v),
        }
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<i32> for Scalar {
    fn from(v: i32) -> Self {
        Scalar::Int(v.into())
    }
}

impl From<u32> for Scalar {
    fn from(v: u32) -> Self {
        Scalar::Int(v.into())
    }
}

impl From<u64> for Scalar {
    fn from(v: u64) -> Self {
        Scalar::Int(v as i64)
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Text(v.to_owned())
    }
}

impl From<String> for Scalar {
    fn from(v: String) -> Self {
        Scalar::Text(v)
    }
}

/// Schema-bearing map of field name to scalar. Ordered, so serialization is
/// canonical.
pub type Record = BTreeMap<String, Scalar>;

/// Builds a [`Record`] from `key => value` pairs.
#[macro_export]
macro_rules! record {
    () => { $crate::value::Record::new() };
    ($($k:expr => $v:expr),+ $(,)?) => {{
        let mut r = $crate::value::Record::new();
        $( r.insert(::std::string::String::from($k), $crate::value::Scalar::from($v)); )+
        r
    }};
}

/// Canonical byte encoding used for hashing and byte-equality checks.
pub fn canonical_bytes(record: &Record) -> Vec<u8> {
    serde_json::to_vec(record).expect("records always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untagged_json_shape() {
        let r = record! { "a" => 1i64, "b" => "x", "c" => true };
        assert_eq!(
            String::from_utf8(canonical_bytes(&r)).unwrap(),
            r#"{"a":1,"b":"x","c":true}"#
        );
        let back: Record = serde_json::from_slice(&canonical_bytes(&r)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn key_order_is_canonical() {
        let a = record! { "z" => 1i64, "a" => 2i64 };
        let b = record! { "a" => 2i64, "z" => 1i64 };
        assert_eq!(canonical_bytes(&a), canonical_bytes(&b));
    }
}
