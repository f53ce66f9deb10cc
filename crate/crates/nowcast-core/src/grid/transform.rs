//! Rate transform between physical mm/h and model space.
//!
//! Heavy-tailed rain rates are compressed with `ln(1 + min(x, cap))`; zero is
//! a fixed point and the transform is strictly monotone below the cap. The
//! inverse clamps at zero so model outputs always map to valid rates.

use crate::error::{Error, Result};

/// Rates above this cap (mm/h) are clipped before the log transform.
pub const RATE_CAP_MM_H: f64 = 100.0;

/// Physical rate (mm/h, nonnegative) to model space.
pub fn transform(x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Data(format!(
            "rate {} is not a nonnegative finite mm/h value",
            x
        )));
    }
    Ok(x.min(RATE_CAP_MM_H).ln_1p())
}

/// Model space back to a physical rate; never returns a negative rate.
pub fn inverse_transform(y: f64) -> f64 {
    y.exp_m1().max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_a_fixed_point() {
        assert_eq!(transform(0.0).unwrap(), 0.0);
        assert_eq!(inverse_transform(0.0), 0.0);
    }

    #[test]
    fn e_minus_one_maps_to_one() {
        let x = std::f64::consts::E - 1.0;
        assert!((transform(x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clipping_above_cap_is_lossy() {
        let y = transform(250.0).unwrap();
        assert!((y - 101.0f64.ln()).abs() < 1e-12);
        assert!((inverse_transform(y) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn roundtrip_below_cap() {
        for &x in &[0.0, 1e-6, 0.1, 1.0, 7.3, 42.0, 99.999] {
            let back = inverse_transform(transform(x).unwrap());
            assert!((back - x).abs() < 1e-6 * x.max(1.0), "x={} back={}", x, back);
        }
    }

    #[test]
    fn negative_input_is_a_data_error() {
        assert!(matches!(transform(-0.5), Err(Error::Data(_))));
    }

    #[test]
    fn monotone_on_valid_range() {
        let mut prev = -1.0;
        for i in 0..=1000 {
            let x = i as f64 * 0.1;
            let y = transform(x).unwrap();
            assert!(y > prev);
            prev = y;
        }
    }
}
