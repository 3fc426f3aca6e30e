//! Text output shared by the CSV writers.

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_width_mantissa() {
        assert_eq!(sig17(1.0), "1.0000000000000000e0");
        assert_eq!(sig17(-0.1), "-1.0000000000000001e-1");
        assert_eq!(sig17(f64::NAN), "NaN");
    }

    proptest! {
        #[test]
        fn round_trips(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
            prop_assert_eq!(sig17(x).parse::<f64>().unwrap(), x);
        }
    }
}
