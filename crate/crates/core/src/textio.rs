//! Number formatting and line-numbered TOML errors shared by the file formats.

use crate::error::Error;

/// Formats `x` like C's `%.12g`.
pub fn fmt_g(x: f64) -> String {
    fmt_g_prec(x, 12)
}

pub fn fmt_g_prec(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let p = precision.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// 1-based line containing byte `offset` of `text`.
pub fn line_of(text: &str, offset: usize) -> usize {
    let end = offset.min(text.len());
    text.as_bytes()[..end].iter().filter(|&&b| b == b'\n').count() + 1
}

/// Converts a TOML deserialisation error into [`Error::Parse`] with its line.
pub fn toml_error(text: &str, err: toml::de::Error) -> Error {
    let line = err.span().map_or(1, |span| line_of(text, span.start));
    Error::Parse {
        line,
        msg: err.message().to_string(),
    }
}

/// Builds a parse error anchored at the span start.
pub fn parse_error(text: &str, span: std::ops::Range<usize>, msg: impl Into<String>) -> Error {
    Error::Parse {
        line: line_of(text, span.start),
        msg: msg.into(),
    }
}

/// Shortest round-trip decimal representation, always with a decimal point or exponent.
pub fn fmt_exact(x: f64) -> String {
    let s = format!("{x:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

pub fn fmt_exact_list(xs: &[f64]) -> String {
    let items: Vec<String> = xs.iter().map(|&x| fmt_exact(x)).collect();
    format!("[{}]", items.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_c_percent_g() {
        // Reference strings produced by printf("%.12g").
        let cases = [
            (1.0, "1"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333333"),
            (-2.4658792, "-2.4658792"),
            (1.0e-5, "1e-05"),
            (1.234e-5, "1.234e-05"),
            (123456789012.0, "123456789012"),
            (1234567890123.0, "1.23456789012e+12"),
            (0.0001, "0.0001"),
            (2.0 / 3.0 * 100.0, "66.6666666667"),
            (0.0, "0"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_g(x), want, "{x}");
        }
    }

    #[test]
    fn exact_round_trip() {
        for x in [0.1, 1.0, -2.5e-17, 1.0 / 3.0, 1e300] {
            assert_eq!(fmt_exact(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_exact(2.0), "2.0");
    }

    #[test]
    fn line_numbers() {
        let text = "a\nbb\nccc";
        assert_eq!(line_of(text, 0), 1);
        assert_eq!(line_of(text, 2), 2);
        assert_eq!(line_of(text, 5), 3);
    }
}
