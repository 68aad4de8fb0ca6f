//! Number formatting and grid helpers shared by the CSV/JSON writers.

use crate::error::{Error, Result};

/// Significant digits in every emitted float.
pub const SIGNIFICANT_DIGITS: usize = 12;

/// `x` with [`SIGNIFICANT_DIGITS`] significant digits, `%g` style: fixed
/// notation for moderate exponents, scientific otherwise, trailing zeros
/// trimmed.
pub fn sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..SIGNIFICANT_DIGITS as i32).contains(&exp) {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim(mantissa.to_string()), exp)
    }
}

fn trim(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `lo, lo + step, ...` up to and including `hi` (within a 1e-9 step slack).
pub fn grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || hi < lo {
        return Err(Error::InvalidArgument(format!(
            "bad range {lo}:{hi}:{step}"
        )));
    }
    if hi == lo {
        return Ok(vec![lo]);
    }
    if step <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step {step} must be positive"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

/// Parses `lo:hi:step` or a single number.
pub fn parse_range(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("'{s}' is not a number")))
    };
    match parts.as_slice() {
        [single] => Ok(vec![num(single)?]),
        [lo, hi, step] => grid(num(lo)?, num(hi)?, num(step)?),
        _ => Err(Error::InvalidArgument(format!(
            "range '{text}' must be lo:hi:step"
        ))),
    }
}
