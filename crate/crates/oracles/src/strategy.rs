//! Proptest generators for CBOR corpora.

use gridsign_core::cbor::Simple;
use gridsign_core::CborValue;
use proptest::prelude::*;

fn int() -> impl Strategy<Value = u64> {
    prop_oneof![
        0u64..=23,
        24u64..=255,
        256u64..=65535,
        65536u64..=u32::MAX as u64,
        any::<u64>(),
        Just(u64::MAX),
    ]
}

pub fn leaf() -> impl Strategy<Value = CborValue> {
    prop_oneof![
        int().prop_map(CborValue::UnsignedInt),
        int().prop_map(CborValue::NegativeInt),
        prop::collection::vec(any::<u8>(), 0..40).prop_map(CborValue::ByteString),
        ".{0,24}".prop_map(CborValue::TextString),
        prop_oneof![Just(Simple::False), Just(Simple::True), Just(Simple::Null)]
            .prop_map(CborValue::Simple),
    ]
}

/// Arbitrary values up to a few levels deep. Map keys are distinct by
/// construction only in the sense that duplicates are removed.
pub fn value() -> impl Strategy<Value = CborValue> {
    leaf().prop_recursive(4, 64, 8, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..8).prop_map(CborValue::Array),
            prop::collection::vec((inner.clone(), inner.clone()), 0..6).prop_map(|entries| {
                let mut unique: Vec<(CborValue, CborValue)> = Vec::new();
                for (k, v) in entries {
                    if !unique.iter().any(|(u, _)| *u == k) {
                        unique.push((k, v));
                    }
                }
                CborValue::Map(unique)
            }),
            // ciborium folds tags 2 and 3 over small byte strings into integers
            (int().prop_filter("bignum tag", |t| *t != 2 && *t != 3), inner)
                .prop_map(|(t, v)| CborValue::Tag(t, Box::new(v))),
        ]
    })
}
