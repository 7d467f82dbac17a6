//! Deterministic CBOR encoder and tolerant decoder.
//!
//! The encoder always emits the core deterministic profile of RFC 8949:
//! shortest-form heads, definite lengths, and map entries sorted by the
//! bytewise order of their encoded keys. The decoder accepts any well-formed
//! item within the supported data model and reports whether the input was
//! already in deterministic form.

use alloc::{boxed::Box, string::String, vec::Vec};
use core::fmt;

const MAJOR_UNSIGNED: u8 = 0;
const MAJOR_NEGATIVE: u8 = 1;
const MAJOR_BYTES: u8 = 2;
const MAJOR_TEXT: u8 = 3;
const MAJOR_ARRAY: u8 = 4;
const MAJOR_MAP: u8 = 5;
const MAJOR_TAG: u8 = 6;
const MAJOR_SIMPLE: u8 = 7;

const AI_INDEFINITE: u8 = 31;
const BREAK: u8 = 0xff;

/// Default nesting limit for [`decode`].
pub const DEFAULT_MAX_DEPTH: usize = 32;

/// The three simple values in the supported data model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Simple {
    False,
    True,
    Null,
}

/// A CBOR data item.
///
/// Floating-point values and simple values other than `false`, `true` and
/// `null` are outside the model; the decoder rejects them.
#[derive(Debug, Clone)]
pub enum CborValue {
    UnsignedInt(u64),
    /// The negative integer `-1 - n`, covering `-2^64 ..= -1`.
    NegativeInt(u64),
    ByteString(Vec<u8>),
    TextString(String),
    Array(Vec<CborValue>),
    /// Entries in insertion order. Equality ignores order.
    Map(Vec<(CborValue, CborValue)>),
    Tag(u64, Box<CborValue>),
    Simple(Simple),
}

impl PartialEq for CborValue {
    fn eq(&self, other: &Self) -> bool {
        use CborValue::*;
        match (self, other) {
            (UnsignedInt(a), UnsignedInt(b)) | (NegativeInt(a), NegativeInt(b)) => a == b,
            (ByteString(a), ByteString(b)) => a == b,
            (TextString(a), TextString(b)) => a == b,
            (Array(a), Array(b)) => a == b,
            (Map(a), Map(b)) => {
                a.len() == b.len()
                    && a.iter()
                        .all(|(k, v)| b.iter().any(|(k2, v2)| k == k2 && v == v2))
            }
            (Tag(t, a), Tag(u, b)) => t == u && a == b,
            (Simple(a), Simple(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for CborValue {}

impl From<i64> for CborValue {
    fn from(v: i64) -> Self {
        if v >= 0 {
            CborValue::UnsignedInt(v as u64)
        } else {
            CborValue::NegativeInt(!(v as u64))
        }
    }
}

impl From<u64> for CborValue {
    fn from(v: u64) -> Self {
        CborValue::UnsignedInt(v)
    }
}

impl From<&str> for CborValue {
    fn from(v: &str) -> Self {
        CborValue::TextString(v.into())
    }
}

impl From<Vec<u8>> for CborValue {
    fn from(v: Vec<u8>) -> Self {
        CborValue::ByteString(v)
    }
}

impl CborValue {
    /// Integer value if it fits in an `i64`.
    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            CborValue::UnsignedInt(n) => i64::try_from(n).ok(),
            CborValue::NegativeInt(n) => i64::try_from(n).ok().map(|n| -1 - n),
            _ => None,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        match *self {
            CborValue::UnsignedInt(n) => Some(n),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            CborValue::ByteString(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            CborValue::TextString(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[CborValue]> {
        match self {
            CborValue::Array(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&[(CborValue, CborValue)]> {
        match self {
            CborValue::Map(m) => Some(m),
            _ => None,
        }
    }

    /// Looks up `key` in a map value.
    pub fn map_get(&self, key: &CborValue) -> Option<&CborValue> {
        self.as_map()?
            .iter()
            .find_map(|(k, v)| (k == key).then_some(v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CborError {
    #[error("malformed CBOR at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: &'static str },
    #[error("{0} trailing byte(s) after the top-level item")]
    TrailingBytes(usize),
    #[error("nesting depth exceeds the limit of {0}")]
    DepthExceeded(usize),
    #[error("duplicate map key")]
    DuplicateMapKey,
}

/// Encodes `value` in deterministic form.
pub fn encode(value: &CborValue) -> Result<Vec<u8>, CborError> {
    let mut out = Vec::new();
    encode_into(value, &mut out)?;
    Ok(out)
}

/// Appends the deterministic encoding of `value` to `out`.
///
/// On error `out` may hold a partial encoding.
pub fn encode_into(value: &CborValue, out: &mut Vec<u8>) -> Result<(), CborError> {
    match value {
        CborValue::UnsignedInt(n) => write_head(out, MAJOR_UNSIGNED, *n),
        CborValue::NegativeInt(n) => write_head(out, MAJOR_NEGATIVE, *n),
        CborValue::ByteString(b) => {
            write_head(out, MAJOR_BYTES, b.len() as u64);
            out.extend_from_slice(b);
        }
        CborValue::TextString(s) => {
            write_head(out, MAJOR_TEXT, s.len() as u64);
            out.extend_from_slice(s.as_bytes());
        }
        CborValue::Array(items) => {
            write_head(out, MAJOR_ARRAY, items.len() as u64);
            for item in items {
                encode_into(item, out)?;
            }
        }
        CborValue::Map(entries) => {
            let mut keys = Vec::with_capacity(entries.len());
            for (i, (k, _)) in entries.iter().enumerate() {
                keys.push((encode(k)?, i));
            }
            keys.sort_unstable_by(|a, b| a.0.cmp(&b.0));
            if keys.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(CborError::DuplicateMapKey);
            }
            write_head(out, MAJOR_MAP, entries.len() as u64);
            for (key, i) in keys {
                out.extend_from_slice(&key);
                encode_into(&entries[i].1, out)?;
            }
        }
        CborValue::Tag(tag, inner) => {
            write_head(out, MAJOR_TAG, *tag);
            encode_into(inner, out)?;
        }
        CborValue::Simple(s) => out.push(match s {
            Simple::False => 0xf4,
            Simple::True => 0xf5,
            Simple::Null => 0xf6,
        }),
    }
    Ok(())
}

/// Writes a shortest-form initial byte plus argument.
pub(crate) fn write_head(out: &mut Vec<u8>, major: u8, arg: u64) {
    let mt = major << 5;
    if arg < 24 {
        out.push(mt | arg as u8);
    } else if arg <= u8::MAX as u64 {
        out.extend_from_slice(&[mt | 24, arg as u8]);
    } else if arg <= u16::MAX as u64 {
        out.push(mt | 25);
        out.extend_from_slice(&(arg as u16).to_be_bytes());
    } else if arg <= u32::MAX as u64 {
        out.push(mt | 26);
        out.extend_from_slice(&(arg as u32).to_be_bytes());
    } else {
        out.push(mt | 27);
        out.extend_from_slice(&arg.to_be_bytes());
    }
}

/// Size of the head [`write_head`] would emit for `arg`.
pub fn head_len(arg: u64) -> usize {
    match arg {
        0..=23 => 1,
        24..=0xff => 2,
        0x100..=0xffff => 3,
        0x1_0000..=0xffff_ffff => 5,
        _ => 9,
    }
}

/// Decoder limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    /// Maximum container nesting (arrays, maps and tags each count one level).
    pub max_depth: usize,
    /// Maximum chunks or items inside one indefinite-length item.
    pub max_indefinite_items: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            max_indefinite_items: 4096,
        }
    }
}

/// Result of [`decode_with`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub value: CborValue,
    /// `true` when the input is byte-identical to `encode(&value)`.
    pub canonical: bool,
}

/// Decodes exactly one item spanning all of `input`, with default limits.
pub fn decode(input: &[u8]) -> Result<CborValue, CborError> {
    decode_with(input, &DecodeOptions::default()).map(|d| d.value)
}

/// Decodes exactly one item spanning all of `input`.
pub fn decode_with(input: &[u8], opts: &DecodeOptions) -> Result<Decoded, CborError> {
    let mut dec = Decoder {
        input,
        pos: 0,
        opts,
        canonical: true,
    };
    if input.is_empty() {
        return Err(dec.malformed("empty input"));
    }
    let value = dec.item(0)?;
    if dec.pos != input.len() {
        return Err(CborError::TrailingBytes(input.len() - dec.pos));
    }
    Ok(Decoded {
        value,
        canonical: dec.canonical,
    })
}

enum Arg {
    Definite(u64),
    Indefinite,
}

struct Decoder<'a, 'o> {
    input: &'a [u8],
    pos: usize,
    opts: &'o DecodeOptions,
    canonical: bool,
}

impl<'a> Decoder<'a, '_> {
    fn malformed(&self, reason: &'static str) -> CborError {
        CborError::Malformed {
            offset: self.pos,
            reason,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CborError> {
        if self.input.len() - self.pos < n {
            return Err(self.malformed("truncated input"));
        }
        let s = &self.input[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.input.len() - self.pos
    }

    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn head(&mut self) -> Result<(u8, Arg), CborError> {
        let ib = self.take(1)?[0];
        let major = ib >> 5;
        let ai = ib & 0x1f;
        let (arg, min) = match ai {
            0..=23 => return Ok((major, Arg::Definite(ai as u64))),
            24 => (self.take(1)?[0] as u64, 24),
            25 => (u16::from_be_bytes([self.take(1)?[0], self.take(1)?[0]]) as u64, 0x100),
            26 => {
                let b = self.take(4)?;
                (u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as u64, 0x1_0000)
            }
            27 => {
                let b = self.take(8)?;
                let mut a = [0u8; 8];
                a.copy_from_slice(b);
                (u64::from_be_bytes(a), 0x1_0000_0000)
            }
            AI_INDEFINITE => return Ok((major, Arg::Indefinite)),
            _ => {
                self.pos -= 1;
                return Err(self.malformed("reserved additional information"));
            }
        };
        if arg < min {
            self.canonical = false;
        }
        Ok((major, Arg::Definite(arg)))
    }

    fn length(&self, n: u64) -> Result<usize, CborError> {
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.remaining())
            .ok_or_else(|| self.malformed("declared length exceeds input"))
    }

    fn enter(&self, depth: usize) -> Result<usize, CborError> {
        let depth = depth + 1;
        if depth > self.opts.max_depth {
            return Err(CborError::DepthExceeded(self.opts.max_depth));
        }
        Ok(depth)
    }

    fn item(&mut self, depth: usize) -> Result<CborValue, CborError> {
        let start = self.pos;
        let (major, arg) = self.head()?;
        match (major, arg) {
            (MAJOR_UNSIGNED, Arg::Definite(n)) => Ok(CborValue::UnsignedInt(n)),
            (MAJOR_NEGATIVE, Arg::Definite(n)) => Ok(CborValue::NegativeInt(n)),
            (MAJOR_BYTES, Arg::Definite(n)) => {
                let len = self.length(n)?;
                Ok(CborValue::ByteString(self.take(len)?.to_vec()))
            }
            (MAJOR_BYTES, Arg::Indefinite) => {
                self.canonical = false;
                Ok(CborValue::ByteString(self.chunks(MAJOR_BYTES)?))
            }
            (MAJOR_TEXT, Arg::Definite(n)) => {
                let len = self.length(n)?;
                let raw = self.take(len)?;
                let s = core::str::from_utf8(raw).map_err(|_| CborError::Malformed {
                    offset: start,
                    reason: "invalid UTF-8 in text string",
                })?;
                Ok(CborValue::TextString(s.into()))
            }
            (MAJOR_TEXT, Arg::Indefinite) => {
                self.canonical = false;
                let raw = self.chunks(MAJOR_TEXT)?;
                String::from_utf8(raw)
                    .map(CborValue::TextString)
                    .map_err(|_| CborError::Malformed {
                        offset: start,
                        reason: "invalid UTF-8 in text string",
                    })
            }
            (MAJOR_ARRAY, arg) => {
                let depth = self.enter(depth)?;
                let mut items = Vec::new();
                match arg {
                    Arg::Definite(n) => {
                        // every item needs at least one byte
                        let n = self.length(n)?;
                        items.reserve(n);
                        for _ in 0..n {
                            items.push(self.item(depth)?);
                        }
                    }
                    Arg::Indefinite => {
                        self.canonical = false;
                        while !self.at_break()? {
                            if items.len() == self.opts.max_indefinite_items {
                                return Err(self.malformed("indefinite-length item too long"));
                            }
                            items.push(self.item(depth)?);
                        }
                    }
                }
                Ok(CborValue::Array(items))
            }
            (MAJOR_MAP, arg) => {
                let depth = self.enter(depth)?;
                let mut entries = Vec::new();
                match arg {
                    Arg::Definite(n) => {
                        let n = self.length(n)?;
                        entries.reserve(n / 2);
                        for _ in 0..n {
                            let k = self.item(depth)?;
                            let v = self.item(depth)?;
                            entries.push((k, v));
                        }
                    }
                    Arg::Indefinite => {
                        self.canonical = false;
                        while !self.at_break()? {
                            if entries.len() == self.opts.max_indefinite_items {
                                return Err(self.malformed("indefinite-length item too long"));
                            }
                            let k = self.item(depth)?;
                            let v = self.item(depth)?;
                            entries.push((k, v));
                        }
                    }
                }
                self.check_keys(&entries)?;
                Ok(CborValue::Map(entries))
            }
            (MAJOR_TAG, Arg::Definite(tag)) => {
                let depth = self.enter(depth)?;
                Ok(CborValue::Tag(tag, Box::new(self.item(depth)?)))
            }
            (MAJOR_SIMPLE, Arg::Indefinite) => Err(CborError::Malformed {
                offset: start,
                reason: "unexpected break",
            }),
            (MAJOR_SIMPLE, Arg::Definite(_)) => {
                let reason = match self.input[start] & 0x1f {
                    20 => return Ok(CborValue::Simple(Simple::False)),
                    21 => return Ok(CborValue::Simple(Simple::True)),
                    22 => return Ok(CborValue::Simple(Simple::Null)),
                    25..=27 => "floating-point values are not supported",
                    _ => "unsupported simple value",
                };
                Err(CborError::Malformed {
                    offset: start,
                    reason,
                })
            }
            _ => Err(CborError::Malformed {
                offset: start,
                reason: "indefinite length not allowed for this major type",
            }),
        }
    }

    fn at_break(&mut self) -> Result<bool, CborError> {
        match self.peek() {
            Some(BREAK) => {
                self.pos += 1;
                Ok(true)
            }
            Some(_) => Ok(false),
            None => Err(self.malformed("unterminated indefinite-length item")),
        }
    }

    fn chunks(&mut self, major: u8) -> Result<Vec<u8>, CborError> {
        let mut out = Vec::new();
        let mut count = 0;
        while !self.at_break()? {
            if count == self.opts.max_indefinite_items {
                return Err(self.malformed("indefinite-length item too long"));
            }
            count += 1;
            let chunk_start = self.pos;
            match self.head()? {
                (m, Arg::Definite(n)) if m == major => {
                    let len = self.length(n)?;
                    let chunk = self.take(len)?;
                    if major == MAJOR_TEXT && core::str::from_utf8(chunk).is_err() {
                        return Err(CborError::Malformed {
                            offset: chunk_start,
                            reason: "invalid UTF-8 in text string",
                        });
                    }
                    out.extend_from_slice(chunk);
                }
                _ => {
                    return Err(CborError::Malformed {
                        offset: chunk_start,
                        reason: "invalid chunk in indefinite-length string",
                    })
                }
            }
        }
        Ok(out)
    }

    fn check_keys(&mut self, entries: &[(CborValue, CborValue)]) -> Result<(), CborError> {
        let mut keys = Vec::with_capacity(entries.len());
        for (k, _) in entries {
            keys.push(encode(k)?);
        }
        if keys.windows(2).any(|w| w[0] >= w[1]) {
            self.canonical = false;
        }
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(CborError::DuplicateMapKey);
        }
        Ok(())
    }
}

impl fmt::Display for CborValue {
    /// Diagnostic notation, roughly as in RFC 8949 section 8.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CborValue::UnsignedInt(n) => write!(f, "{n}"),
            CborValue::NegativeInt(n) => write!(f, "{}", -1 - *n as i128),
            CborValue::ByteString(b) => {
                f.write_str("h'")?;
                for byte in b {
                    write!(f, "{byte:02x}")?;
                }
                f.write_str("'")
            }
            CborValue::TextString(s) => write!(f, "{s:?}"),
            CborValue::Array(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
            CborValue::Map(entries) => {
                f.write_str("{")?;
                for (i, (k, v)) in entries.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}: {v}")?;
                }
                f.write_str("}")
            }
            CborValue::Tag(t, inner) => write!(f, "{t}({inner})"),
            CborValue::Simple(Simple::False) => f.write_str("false"),
            CborValue::Simple(Simple::True) => f.write_str("true"),
            CborValue::Simple(Simple::Null) => f.write_str("null"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn hex(s: &str) -> Vec<u8> {
        (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
            .collect()
    }

    #[test]
    fn spec_examples() {
        assert_eq!(encode(&CborValue::UnsignedInt(0)).unwrap(), [0x00]);
        assert_eq!(encode(&CborValue::Array(vec![])).unwrap(), [0x80]);
        assert_eq!(encode(&CborValue::ByteString(vec![])).unwrap(), [0x40]);
        assert_eq!(decode(&[0x00]).unwrap(), CborValue::UnsignedInt(0));
        assert_eq!(decode(&[0x61, 0x61]).unwrap(), CborValue::from("a"));
        assert!(matches!(decode(&[0xff]), Err(CborError::Malformed { .. })));
    }

    #[test]
    fn negative_extremes() {
        assert_eq!(
            encode(&CborValue::NegativeInt(u64::MAX)).unwrap(),
            hex("3bffffffffffffffff")
        );
        assert_eq!(CborValue::from(-1i64), CborValue::NegativeInt(0));
        assert_eq!(CborValue::from(i64::MIN).as_i64(), Some(i64::MIN));
        assert_eq!(CborValue::NegativeInt(u64::MAX).as_i64(), None);
    }

    #[test]
    fn map_keys_sorted_bytewise() {
        let m = CborValue::Map(vec![
            (CborValue::from("aa"), CborValue::from(1i64)),
            (CborValue::from(-1i64), CborValue::from(2i64)),
            (CborValue::from(10i64), CborValue::from(3i64)),
            (CborValue::from(100i64), CborValue::from(4i64)),
        ]);
        assert_eq!(encode(&m).unwrap(), hex("a40a03186404200262616101"));
    }

    #[test]
    fn duplicate_keys_rejected_both_ways() {
        let m = CborValue::Map(vec![
            (CborValue::from(1i64), CborValue::from(1i64)),
            (CborValue::from(1i64), CborValue::from(2i64)),
        ]);
        assert_eq!(encode(&m), Err(CborError::DuplicateMapKey));
        assert_eq!(decode(&hex("a201010102")), Err(CborError::DuplicateMapKey));
        // same key value, different (non-shortest) encodings
        assert_eq!(decode(&hex("a20101180102")), Err(CborError::DuplicateMapKey));
    }

    #[test]
    fn non_canonical_input_is_flagged() {
        let opts = DecodeOptions::default();
        let d = decode_with(&hex("1800"), &opts).unwrap();
        assert_eq!(d.value, CborValue::UnsignedInt(0));
        assert!(!d.canonical);
        let d = decode_with(&hex("9f0102ff"), &opts).unwrap();
        assert_eq!(
            d.value,
            CborValue::Array(vec![CborValue::from(1i64), CborValue::from(2i64)])
        );
        assert!(!d.canonical);
        // unsorted keys
        let d = decode_with(&hex("a202010101"), &opts).unwrap();
        assert!(!d.canonical);
        let d = decode_with(&hex("a201010201"), &opts).unwrap();
        assert!(d.canonical);
        let d = decode_with(&hex("5f42010243030405ff"), &opts).unwrap();
        assert_eq!(d.value, CborValue::ByteString(hex("0102030405")));
        assert!(!d.canonical);
    }

    #[test]
    fn malformed_inputs() {
        for bad in [
            "",
            "18",
            "1c",
            "5f01ff",
            "62c328",
            "7f61c3ff",
            "9f01",
            "f97e00",
            "fb3ff0000000000000",
            "f7",
            "f820",
            "1f",
            "c1ff",
            "5bffffffffffffffff",
        ] {
            assert!(
                matches!(decode(&hex(bad)), Err(CborError::Malformed { .. })),
                "{bad}"
            );
        }
        assert_eq!(decode(&hex("0000")), Err(CborError::TrailingBytes(1)));
    }

    #[test]
    fn depth_limit() {
        let mut v = CborValue::UnsignedInt(0);
        for _ in 0..32 {
            v = CborValue::Array(vec![v]);
        }
        let enc = encode(&v).unwrap();
        assert_eq!(decode(&enc).unwrap(), v);
        let deeper = encode(&CborValue::Array(vec![v])).unwrap();
        assert_eq!(decode(&deeper), Err(CborError::DepthExceeded(32)));
        let opts = DecodeOptions {
            max_depth: 64,
            ..Default::default()
        };
        assert!(decode_with(&deeper, &opts).is_ok());
    }

    #[test]
    fn indefinite_item_limit() {
        let opts = DecodeOptions {
            max_indefinite_items: 2,
            ..Default::default()
        };
        assert!(decode_with(&hex("9f0102ff"), &opts).is_ok());
        assert!(matches!(
            decode_with(&hex("9f010203ff"), &opts),
            Err(CborError::Malformed { .. })
        ));
    }

    #[test]
    fn map_equality_ignores_order() {
        let a = CborValue::Map(vec![
            (CborValue::from(1i64), CborValue::from("x")),
            (CborValue::from(2i64), CborValue::from("y")),
        ]);
        let b = CborValue::Map(vec![
            (CborValue::from(2i64), CborValue::from("y")),
            (CborValue::from(1i64), CborValue::from("x")),
        ]);
        assert_eq!(a, b);
        assert_eq!(encode(&a).unwrap(), encode(&b).unwrap());
    }

    #[test]
    fn head_len_matches_writer() {
        for arg in [0, 23, 24, 255, 256, 65535, 65536, u32::MAX as u64, u32::MAX as u64 + 1, u64::MAX] {
            let mut out = Vec::new();
            write_head(&mut out, 2, arg);
            assert_eq!(out.len(), head_len(arg));
        }
    }
}
