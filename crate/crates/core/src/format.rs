//! Locale-independent number formatting for reports.

/// `%.12g`-style rendering: 12 significant digits, trailing zeros removed,
/// scientific notation outside `[1e-4, 1e12)`.
pub fn g12(x: f64) -> String {
    general(x, 12)
}

/// `%.{precision}g`-style rendering.
pub fn general(x: f64, precision: usize) -> String {
    let p = precision.max(1);
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_c_general_format() {
        assert_eq!(g12(16.0), "16");
        assert_eq!(g12(0.125), "0.125");
        assert_eq!(g12(-0.0), "0");
        assert_eq!(g12(1.0 / 3.0), "0.333333333333");
        assert_eq!(g12(2.0 / 3.0 * 1e-7), "6.66666666667e-08");
        assert_eq!(g12(1e12), "1e+12");
        assert_eq!(g12(123456789012.0), "123456789012");
        assert_eq!(g12(0.0001), "0.0001");
        assert_eq!(g12(-2.5e-5), "-2.5e-05");
        assert_eq!(g12(f64::NAN), "nan");
        assert_eq!(g12(9.9999999999999e-5), "0.0001");
    }

    #[test]
    fn round_trips_at_twelve_digits() {
        for &x in &[std::f64::consts::PI, 1e-9 * std::f64::consts::E, 12345.678901234, -7.0e20] {
            let back: f64 = g12(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-11);
        }
    }
}
