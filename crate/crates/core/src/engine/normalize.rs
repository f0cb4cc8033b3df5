use unicode_normalization::UnicodeNormalization;

/// Canonical form used for exact-answer comparison.
///
/// NFC, then simple (one-to-one) case folding, then trim, then every
/// internal whitespace run collapsed to a single U+0020.
pub fn normalize_text(raw: &str) -> String {
    let folded: String = raw.nfc().map(simple_fold).collect();
    let mut out = String::with_capacity(folded.len());
    for word in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Simple case folding (CaseFolding.txt statuses C and S).
///
/// The simple lowercase mapping agrees with simple folding except for the
/// code points in [`FOLD_EXCEPTIONS`] and the Cherokee capitals, which fold
/// to themselves while their small letters fold up to them.
pub fn simple_fold(c: char) -> char {
    if let Ok(i) = FOLD_EXCEPTIONS.binary_search_by_key(&c, |&(from, _)| from) {
        return FOLD_EXCEPTIONS[i].1;
    }
    match c as u32 {
        0x13A0..=0x13F5 => return c,
        cp @ 0xAB70..=0xABBF => return char::from_u32(cp - 0xAB70 + 0x13A0).unwrap_or(c),
        _ => {}
    }
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        // Only U+0130 lowercases to two code points; it has no C/S fold.
        _ => c,
    }
}

/// Folds that differ from the simple lowercase mapping, sorted by source.
const FOLD_EXCEPTIONS: &[(char, char)] = &[
    ('\u{00B5}', '\u{03BC}'),
    ('\u{017F}', '\u{0073}'),
    ('\u{0345}', '\u{03B9}'),
    ('\u{03C2}', '\u{03C3}'),
    ('\u{03D0}', '\u{03B2}'),
    ('\u{03D1}', '\u{03B8}'),
    ('\u{03D5}', '\u{03C6}'),
    ('\u{03D6}', '\u{03C0}'),
    ('\u{03F0}', '\u{03BA}'),
    ('\u{03F1}', '\u{03C1}'),
    ('\u{03F5}', '\u{03B5}'),
    ('\u{13F8}', '\u{13F0}'),
    ('\u{13F9}', '\u{13F1}'),
    ('\u{13FA}', '\u{13F2}'),
    ('\u{13FB}', '\u{13F3}'),
    ('\u{13FC}', '\u{13F4}'),
    ('\u{13FD}', '\u{13F5}'),
    ('\u{1C80}', '\u{0432}'),
    ('\u{1C81}', '\u{0434}'),
    ('\u{1C82}', '\u{043E}'),
    ('\u{1C83}', '\u{0441}'),
    ('\u{1C84}', '\u{0442}'),
    ('\u{1C85}', '\u{0442}'),
    ('\u{1C86}', '\u{044A}'),
    ('\u{1C87}', '\u{0463}'),
    ('\u{1C88}', '\u{A64B}'),
    ('\u{1E9B}', '\u{1E61}'),
    ('\u{1FBE}', '\u{03B9}'),
];

pub fn is_normalized(s: &str) -> bool {
    normalize_text(s) == s
}
