//! Deterministic CBOR via `ciborium`.
//!
//! `ciborium` keeps map entries in the order given, so maps are sorted here by
//! the `ciborium` encoding of each key before serializing.

use ciborium::value::{Integer, Value};
use gridsign_core::cbor::Simple;
use gridsign_core::CborValue;

pub fn to_value(v: &CborValue) -> Value {
    match v {
        CborValue::UnsignedInt(n) => Value::Integer(Integer::from(*n)),
        CborValue::NegativeInt(n) => {
            let i = -1i128 - i128::from(*n);
            Value::Integer(Integer::try_from(i).expect("within CBOR range"))
        }
        CborValue::ByteString(b) => Value::Bytes(b.clone()),
        CborValue::TextString(s) => Value::Text(s.clone()),
        CborValue::Array(items) => Value::Array(items.iter().map(to_value).collect()),
        CborValue::Map(entries) => {
            let mut pairs: Vec<(Vec<u8>, Value, Value)> = entries
                .iter()
                .map(|(k, v)| {
                    let k = to_value(k);
                    (encode_value(&k), k, to_value(v))
                })
                .collect();
            pairs.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Map(pairs.into_iter().map(|(_, k, v)| (k, v)).collect())
        }
        CborValue::Tag(t, inner) => Value::Tag(*t, Box::new(to_value(inner))),
        CborValue::Simple(Simple::False) => Value::Bool(false),
        CborValue::Simple(Simple::True) => Value::Bool(true),
        CborValue::Simple(Simple::Null) => Value::Null,
    }
}

pub fn from_value(v: Value) -> Option<CborValue> {
    Some(match v {
        Value::Integer(i) => {
            let i = i128::from(i);
            if i >= 0 {
                CborValue::UnsignedInt(u64::try_from(i).ok()?)
            } else {
                CborValue::NegativeInt(u64::try_from(-1 - i).ok()?)
            }
        }
        Value::Bytes(b) => CborValue::ByteString(b),
        Value::Text(s) => CborValue::TextString(s),
        Value::Array(items) => {
            CborValue::Array(items.into_iter().map(from_value).collect::<Option<_>>()?)
        }
        Value::Map(entries) => CborValue::Map(
            entries
                .into_iter()
                .map(|(k, v)| Some((from_value(k)?, from_value(v)?)))
                .collect::<Option<_>>()?,
        ),
        Value::Tag(t, inner) => CborValue::Tag(t, Box::new(from_value(*inner)?)),
        Value::Bool(false) => CborValue::Simple(Simple::False),
        Value::Bool(true) => CborValue::Simple(Simple::True),
        Value::Null => CborValue::Simple(Simple::Null),
        _ => return None,
    })
}

pub fn encode_value(v: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    ciborium::ser::into_writer(v, &mut out).expect("writing to a Vec");
    out
}

/// Deterministic encoding of `v` by the reference implementation.
pub fn encode(v: &CborValue) -> Vec<u8> {
    encode_value(&to_value(v))
}

/// Decodes one complete item, or `None` if `ciborium` rejects the input or it
/// falls outside the shared data model.
pub fn decode(bytes: &[u8]) -> Option<CborValue> {
    let mut reader = bytes;
    let v: Value = ciborium::de::from_reader(&mut reader).ok()?;
    if !reader.is_empty() {
        return None;
    }
    from_value(v)
}
