/// Float rendering used in every CSV output: 17 significant digits, so that
/// values round-trip exactly and files are byte-stable.
pub fn float(x: f64) -> String {
    if x == 0.0 {
        // fold -0 into 0
        return format!("{:.16e}", 0.0);
    }
    format!("{x:.16e}")
}
