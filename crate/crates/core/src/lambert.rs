//! Principal branch of the Lambert W function on `[0, ∞)`.

use crate::error::{invalid, Result};

const MAX_ITERATIONS: usize = 64;

/// Solves `w e^w = x` for `w >= 0`.
///
/// Small arguments use Halley's method on `w e^w - x`; above `e` the
/// iteration runs on `w + ln w - ln x`, which never overflows.
pub fn lambert_w(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return invalid(format!("lambert_w is only defined here for x >= 0, got {x}"));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }
    if x <= std::f64::consts::E {
        let mut w = x.ln_1p() * 0.75;
        for _ in 0..MAX_ITERATIONS {
            let ew = w.exp();
            let f = w * ew - x;
            let denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0);
            let step = f / denom;
            w -= step;
            if step.abs() <= 1e-16 * w.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        Ok(w)
    } else {
        let ln_x = x.ln();
        let l2 = ln_x.ln();
        let mut w = ln_x - l2 + l2 / ln_x;
        for _ in 0..MAX_ITERATIONS {
            let f = w + w.ln() - ln_x;
            let step = f * w / (w + 1.0);
            w -= step;
            if step.abs() <= 1e-16 * w {
                break;
            }
        }
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points() {
        assert_eq!(lambert_w(0.0).unwrap(), 0.0);
        assert!((lambert_w(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        assert!(lambert_w(-1e-3).is_err());
    }

    #[test]
    fn omega_constant() {
        let w = lambert_w(1.0).unwrap();
        assert!((w * w.exp() - 1.0).abs() < 1e-12);
        assert!((w - 0.567_143_290_409_783_8).abs() < 1e-15);
    }

    #[test]
    fn residual_across_scales() {
        for e in -300..=300 {
            let x = 10f64.powf(e as f64);
            let w = lambert_w(x).unwrap();
            if x < 1e300 {
                let residual = (w.ln() + w - x.ln()).abs();
                assert!(residual < 1e-12 * x.ln().abs().max(1.0), "x={x} w={w}");
            }
            assert!(w >= 0.0);
        }
        let w = lambert_w(1e-12).unwrap();
        assert!((w * w.exp() / 1e-12 - 1.0).abs() < 1e-12);
    }
}
