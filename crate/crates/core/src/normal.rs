//! Standard normal distribution helpers with tail-accurate logarithms.
//!
//! The lower tail is evaluated as `Phi(-x) = exp(-x²/2) R(x)` for `x >= 0`,
//! with `R` from Hart's rational approximation below `x = 4` and a Chebyshev
//! series in `1/x²` above, giving about 1e-13 relative accuracy. Because `R` carries no
//! exponential, `ln Phi` and the Mills ratio in the lower tail need no `exp`
//! and stay finite arbitrarily far out.

use std::f64::consts::PI;

/// `ln(sqrt(2 pi))`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
// Hart's rational form loses accuracy beyond this point.
const RATIONAL_CUTOFF: f64 = 4.0;

/// Above this argument `ln Phi(z)` is below 1e-17 in magnitude.
pub const SATURATION: f64 = 8.5;

// Hart (1968) coefficients, highest degree first.
const NUMERATOR: [f64; 7] = [
    3.526_249_659_989_11e-2,
    0.700_383_064_443_688,
    6.373_962_203_531_65,
    33.912_866_078_383,
    112.079_291_497_871,
    221.213_596_169_931,
    220.206_867_912_376,
];
const DENOMINATOR: [f64; 8] = [
    8.838_834_764_831_84e-2,
    1.755_667_163_182_64,
    16.064_177_579_207,
    86.780_732_202_946_1,
    296.564_248_779_674,
    637.333_633_378_831,
    793.826_512_519_948,
    440.413_735_824_752,
];

// Chebyshev coefficients of x R(x) sqrt(2 pi) in s = 32/x² - 1, x >= 4.
const TAIL_SERIES: [f64; 17] = [
    0.972_298_406_466_175_6,
    -0.026_636_690_605_647_502,
    0.001_001_907_686_105_391_7,
    -5.813_451_355_858_345e-5,
    4.408_264_224_846_899e-6,
    -4.038_857_717_565_215_6e-7,
    4.273_426_247_563_049_5e-8,
    -5.072_007_304_558_027e-9,
    6.617_874_185_481_577e-10,
    -9.354_379_295_111_065e-11,
    1.416_576_578_770_336_5e-11,
    -2.278_377_390_380_881_8e-12,
    3.865_095_651_548_908e-13,
    -6.876_841_431_837_534e-14,
    1.277_255_328_441_203_6e-14,
    -2.466_703_232_704_308e-15,
    4.936_880_011_725_314e-16,
];

fn chebyshev(coefficients: &[f64], s: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &c in coefficients[1..].iter().rev() {
        (b1, b2) = (2.0 * s * b1 - b2 + c, b1);
    }
    s * b1 - b2 + coefficients[0]
}

fn horner(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().fold(0.0, |acc, &c| acc * x + c)
}

/// `R(x) = Phi(-x) exp(x²/2)` for `x >= 0`.
pub fn scaled_lower_tail(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < RATIONAL_CUTOFF {
        horner(&NUMERATOR, x) / horner(&DENOMINATOR, x)
    } else {
        // x R(x) sqrt(2 pi) as a smooth function of r = 1/x² on [0, 1/16].
        let r = 1.0 / (x * x);
        chebyshev(&TAIL_SERIES, 32.0 * r - 1.0) / (x * SQRT_2PI)
    }
}

/// Standard normal density.
pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Standard normal CDF, relatively accurate in the lower tail.
pub fn cdf(z: f64) -> f64 {
    let x = z.abs();
    let tail = (-0.5 * x * x).exp() * scaled_lower_tail(x);
    if z <= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Upper tail `1 - Phi(z)`.
pub fn sf(z: f64) -> f64 {
    cdf(-z)
}

/// `ln Phi(z)`, finite for every finite `z` with `z²` representable.
pub fn ln_cdf(z: f64) -> f64 {
    if z <= 0.0 {
        -0.5 * z * z + scaled_lower_tail(-z).ln()
    } else if z < SATURATION {
        let t = (-0.5 * z * z).exp() * scaled_lower_tail(z);
        if t < 1e-4 {
            -t * (1.0 + t * (0.5 + t / 3.0))
        } else {
            (-t).ln_1p()
        }
    } else {
        -(-0.5 * z * z).exp() * scaled_lower_tail(z)
    }
}

/// Inverse Mills ratio `phi(z) / Phi(z)`.
pub fn mills(z: f64) -> f64 {
    if z <= 0.0 {
        1.0 / (SQRT_2PI * scaled_lower_tail(-z))
    } else {
        let g = (-0.5 * z * z).exp();
        g / (SQRT_2PI * (1.0 - g * scaled_lower_tail(z)))
    }
}

/// `(ln Phi(z), phi(z) / Phi(z))` sharing one tail evaluation.
pub fn ln_cdf_and_mills(z: f64) -> (f64, f64) {
    if z <= 0.0 {
        let r = scaled_lower_tail(-z);
        (-0.5 * z * z + r.ln(), 1.0 / (SQRT_2PI * r))
    } else {
        let g = (-0.5 * z * z).exp();
        let t = g * scaled_lower_tail(z);
        let ln = if t < 1e-4 {
            -t * (1.0 + t * (0.5 + t / 3.0))
        } else {
            (-t).ln_1p()
        };
        (ln, g / (SQRT_2PI * (1.0 - t)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn libm_cdf(z: f64) -> f64 {
        0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
    }

    #[test]
    fn known_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-14);
        // Phi(-10) = 7.619853024160527e-24
        assert!((cdf(-10.0) / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-13);
        assert!((sf(1.0) - cdf(-1.0)).abs() == 0.0);
    }

    #[test]
    fn lower_tail_matches_erfc() {
        let mut z = -37.0;
        while z <= 8.0 {
            let (fast, reference) = (cdf(z), libm_cdf(z));
            assert!((fast / reference - 1.0).abs() < 1e-12, "z={z}: {fast} vs {reference}");
            if z < 0.0 {
                let ln_ref = reference.ln();
                assert!((ln_cdf(z) - ln_ref).abs() < 1e-12 * ln_ref.abs().max(1.0), "z={z}");
                let m = pdf(z) / reference;
                assert!((mills(z) / m - 1.0).abs() < 1e-12, "z={z}");
            }
            z += 0.0137;
        }
    }

    #[test]
    fn upper_branches() {
        for &z in &[0.3, 1.0, 3.0, 6.0, 8.4, 8.6, 12.0] {
            let reference = libm_cdf(z);
            assert!((ln_cdf(z) - reference.ln()).abs() < 1e-15, "z={z}");
            assert!((mills(z) - pdf(z) / reference).abs() < 1e-15 * (1.0 + mills(z)), "z={z}");
        }
        assert!((ln_cdf(9.0) + 1.128_588_405_953_064e-19).abs() < 1e-30);
        for &z in &[-30.0, -2.0, 0.0, 1e-3, 2.0, 8.0, 20.0] {
            let (l, m) = ln_cdf_and_mills(z);
            assert!((l - ln_cdf(z)).abs() <= 1e-15 * (1.0 + l.abs()), "z={z}");
            assert!((m - mills(z)).abs() <= 1e-15 * (1.0 + m), "z={z}");
        }
    }

    #[test]
    fn far_lower_tail() {
        // Asymptotic expansion Phi(z) = phi(z)/(-z) (1 - r + 3r² - 15r³ + 105r⁴ ...), r = 1/z².
        for &z in &[-40.0f64, -100.0, -1e4] {
            let r = 1.0 / (z * z);
            let expansion = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
            let series = ln_pdf(z) - (-z).ln() + expansion.ln();
            assert!((ln_cdf(z) - series).abs() < 1e-12 * series.abs(), "z={z}");
            assert!((mills(z) / (-z) - 1.0).abs() < 1.0 / (z * z) * 1.01);
        }
        assert!((mills(0.0) - 2.0 * pdf(0.0)).abs() < 1e-15);
        assert!(mills(40.0) < 1e-300);
    }
}
