//! Test vectors from RFC 8949 Appendix A, excluding floating point.

pub struct Vector {
    pub diagnostic: &'static str,
    pub hex: &'static str,
    /// Already in deterministic form, so re-encoding must reproduce it.
    pub canonical: bool,
    /// Inside the supported data model.
    pub supported: bool,
}

const fn v(diagnostic: &'static str, hex: &'static str) -> Vector {
    Vector { diagnostic, hex, canonical: true, supported: true }
}

const fn indefinite(diagnostic: &'static str, hex: &'static str) -> Vector {
    Vector { diagnostic, hex, canonical: false, supported: true }
}

const fn unsupported(diagnostic: &'static str, hex: &'static str) -> Vector {
    Vector { diagnostic, hex, canonical: false, supported: false }
}

pub const APPENDIX_A: &[Vector] = &[
    v("0", "00"),
    v("1", "01"),
    v("10", "0a"),
    v("23", "17"),
    v("24", "1818"),
    v("25", "1819"),
    v("100", "1864"),
    v("1000", "1903e8"),
    v("1000000", "1a000f4240"),
    v("1000000000000", "1b000000e8d4a51000"),
    v("18446744073709551615", "1bffffffffffffffff"),
    v("2(h'010000000000000000')", "c249010000000000000000"),
    v("-18446744073709551616", "3bffffffffffffffff"),
    v("3(h'010000000000000000')", "c349010000000000000000"),
    v("-1", "20"),
    v("-10", "29"),
    v("-100", "3863"),
    v("-1000", "3903e7"),
    v("false", "f4"),
    v("true", "f5"),
    v("null", "f6"),
    unsupported("undefined", "f7"),
    unsupported("simple(16)", "f0"),
    unsupported("simple(255)", "f8ff"),
    unsupported("0.0", "f90000"),
    unsupported("1.1", "fb3ff199999999999a"),
    v("0(\"2013-03-21T20:04:00Z\")", "c074323031332d30332d32315432303a30343a30305a"),
    v("1(1363896240)", "c11a514b67b0"),
    v("23(h'01020304')", "d74401020304"),
    v("24(h'6449455446')", "d818456449455446"),
    v("32(\"http://www.example.com\")", "d82076687474703a2f2f7777772e6578616d706c652e636f6d"),
    v("h''", "40"),
    v("h'01020304'", "4401020304"),
    v("\"\"", "60"),
    v("\"a\"", "6161"),
    v("\"IETF\"", "6449455446"),
    v("\"\\\"\\\\\"", "62225c"),
    v("\"\u{fc}\"", "62c3bc"),
    v("\"\u{6c34}\"", "63e6b0b4"),
    v("\"\u{10151}\"", "64f0908591"),
    v("[]", "80"),
    v("[1, 2, 3]", "83010203"),
    v("[1, [2, 3], [4, 5]]", "8301820203820405"),
    v(
        "[1, 2, ..., 25]",
        "98190102030405060708090a0b0c0d0e0f101112131415161718181819",
    ),
    v("{}", "a0"),
    v("{1: 2, 3: 4}", "a201020304"),
    v("{\"a\": 1, \"b\": [2, 3]}", "a26161016162820203"),
    v("[\"a\", {\"b\": \"c\"}]", "826161a161626163"),
    v(
        "{\"a\": \"A\", \"b\": \"B\", \"c\": \"C\", \"d\": \"D\", \"e\": \"E\"}",
        "a56161614161626142616361436164614461656145",
    ),
    indefinite("(_ h'0102', h'030405')", "5f42010243030405ff"),
    indefinite("(_ \"strea\", \"ming\")", "7f657374726561646d696e67ff"),
    indefinite("[_ ]", "9fff"),
    indefinite("[_ 1, [2, 3], [_ 4, 5]]", "9f018202039f0405ffff"),
    indefinite("[_ 1, [2, 3], [4, 5]]", "9f01820203820405ff"),
    indefinite("[1, [2, 3], [_ 4, 5]]", "83018202039f0405ff"),
    indefinite("[1, [_ 2, 3], [4, 5]]", "83019f0203ff820405"),
    indefinite(
        "[_ 1, 2, ..., 25]",
        "9f0102030405060708090a0b0c0d0e0f101112131415161718181819ff",
    ),
    indefinite("{_ \"a\": 1, \"b\": [_ 2, 3]}", "bf61610161629f0203ffff"),
    indefinite("[\"a\", {_ \"b\": \"c\"}]", "826161bf61626163ff"),
    indefinite("{_ \"Fun\": true, \"Amt\": -2}", "bf6346756ef563416d7421ff"),
];
