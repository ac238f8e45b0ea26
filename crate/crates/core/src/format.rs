//! Fixed numeric formatting shared by every CSV writer.

/// Formats a float with 17 significant digits in scientific notation.
///
/// 17 digits is enough for any `f64` to survive a text round trip unchanged.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Like [`fmt_f64`] but renders `None` as an empty field.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}
