//! Deterministic decimal formatting for emitted files.

/// Shortest round-trip representation. Plain decimal for moderate magnitudes,
/// exponent form outside [1e-4, 1e16) so dump files stay readable.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".to_string()
        } else {
            "0".to_string()
        };
    }
    let a = x.abs();
    if (1e-4..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Round to 6 significant digits, then format shortest. Used for
/// data-dependent constants in generated model code.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return fmt_f64(x);
    }
    let exp = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(5 - exp);
    let rounded = (x * scale).round() / scale;
    fmt_f64(rounded)
}
