//! Text canonicalization shared by every matching stage.

use alloc::string::String;

/// Lowercases, strips punctuation other than hyphen, and collapses
/// whitespace runs into single spaces.
///
/// ```
/// use medprompt_core::text::canonicalize;
/// assert_eq!(canonicalize("  Chest   X-Ray "), "chest x-ray");
/// assert_eq!(canonicalize("TB."), "tb");
/// ```
pub fn canonicalize(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if !(ch.is_alphanumeric() || ch == '-') {
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.extend(ch.to_lowercase());
    }
    out
}

/// True when `token` is already in canonical form.
pub fn is_canonical(token: &str) -> bool {
    canonicalize(token) == token
}

/// Compares two strings treating embedded digit runs as numbers, so
/// `t2` sorts before `t10`.
pub fn natural_cmp(a: &str, b: &str) -> core::cmp::Ordering {
    use core::cmp::Ordering;

    let (mut xs, mut ys) = (a.as_bytes(), b.as_bytes());
    loop {
        match (xs.first(), ys.first()) {
            (None, None) => return a.cmp(b),
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let xn = xs.iter().take_while(|c| c.is_ascii_digit()).count();
                let yn = ys.iter().take_while(|c| c.is_ascii_digit()).count();
                let (xd, yd) = (trim_zeros(&xs[..xn]), trim_zeros(&ys[..yn]));
                let ord = xd.len().cmp(&yd.len()).then_with(|| xd.cmp(yd));
                if ord != Ordering::Equal {
                    return ord;
                }
                xs = &xs[xn..];
                ys = &ys[yn..];
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(y);
                }
                xs = &xs[1..];
                ys = &ys[1..];
            }
        }
    }
}

fn trim_zeros(digits: &[u8]) -> &[u8] {
    let skip = digits.iter().take_while(|&&d| d == b'0').count();
    &digits[skip..]
}
