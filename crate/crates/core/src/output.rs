//! Locale-free numeric output at 12 significant digits.
//!
//! Follows C's `%.12g`: fixed notation for decimal exponents in `[-4, 12)`,
//! scientific otherwise, trailing zeros removed. Negative zero prints as `0`.

pub const SIGNIFICANT_DIGITS: usize = 12;

pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v);
    let (mantissa, exp) = sci
        .split_once('e')
        .expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= SIGNIFICANT_DIGITS as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `v` rounded to the value [`format_number`] prints.
pub fn round_significant(v: f64) -> f64 {
    if !v.is_finite() {
        return v;
    }
    format_number(v).parse().expect("formatted number parses")
}
