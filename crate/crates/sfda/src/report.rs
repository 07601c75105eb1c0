//! Deterministic text output: floats at 6 significant digits with a plain
//! decimal point, and minimal comma-separated writing. Rerunning a run with
//! the same config must reproduce its CSV files byte for byte, so nothing
//! here consults locale or hash order.

use std::fmt::Write as _;

/// Format with 6 significant digits, fixed notation for moderate
/// magnitudes and scientific otherwise, trailing zeros trimmed.
pub fn fmt_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.5e}", x);
    // "d.dddddde<exp>"
    let (mantissa, exp_str) = sci.split_once('e').expect("exponent in {:e} output");
    let exp: i32 = exp_str.parse().expect("numeric exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        trim_zeros(&fixed)
    } else {
        let m = trim_zeros(mantissa);
        format!("{m}e{exp}")
    }
}

fn trim_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    let t = s.trim_end_matches('0');
    t.trim_end_matches('.').to_string()
}

/// One CSV line from string fields.
pub fn csv_line(fields: &[String]) -> String {
    let mut out = String::new();
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{f}");
    }
    out.push('\n');
    out
}
