//! Float formatting for persisted artifacts: 17 significant decimal digits,
//! enough to round-trip any finite f64 exactly through text.

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_are_exact() {
        let values = [
            0.0,
            -0.0,
            1.0,
            0.1,
            std::f64::consts::PI,
            -2.2250738585072014e-308,
            1.7976931348623157e308,
            0.014261916663832593,
        ];
        for v in values {
            let s = float(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{v} -> {s} -> {back}");
        }
    }
}
