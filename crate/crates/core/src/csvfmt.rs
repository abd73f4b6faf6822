//! Number formatting shared by every CSV writer.

/// Plain decimal with 15 significant digits; `inf`, `-inf` and `nan`
/// for non-finite values.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return format!("{:.14}", 0.0);
    }
    let exponent = v.abs().log10().floor() as i32;
    let decimals = (14 - exponent).clamp(0, 340) as usize;
    format!("{v:.decimals$}")
}
