//! Standard normal distribution helpers and JND unit conversion.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Φ⁻¹(0.75): one JND expressed in internal units.
pub const JND_INTERNAL: f64 = 0.674_489_750_196_081_7;

/// Standard normal CDF, evaluated through the complementary error function.
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile.
///
/// Acklam's rational approximation followed by one Newton step on [`cdf`].
/// Returns ±∞ at the endpoints and NaN outside `[0, 1]`.
pub fn quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] =
        [7.784_695_709_041_462e-3, 3.224_671_290_700_398e-1, 2.445_134_137_142_996, 3.754_408_661_907_416];
    const P_LOW: f64 = 0.024_25;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    let density = pdf(x);
    if density > 0.0 {
        x - (cdf(x) - p) / density
    } else {
        x
    }
}

/// Converts an internal-unit value to JND units.
pub fn to_jnd(internal: f64) -> f64 {
    internal / JND_INTERNAL
}

/// Converts a JND value to internal units.
pub fn from_jnd(jnd: f64) -> f64 {
    jnd * JND_INTERNAL
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        // Values from a 30-digit reference evaluation.
        let table = [
            (0.0, 0.5),
            (1.0, 0.841_344_746_068_542_9),
            (-1.0, 0.158_655_253_931_457_05),
            (2.5, 0.993_790_334_674_223_8),
            (-6.0, 9.865_876_450_376_98e-10),
            (-20.0, 2.753_624_118_606_233e-89),
        ];
        for (x, want) in table {
            let got = cdf(x);
            assert!(((got - want) / want).abs() < 1e-12, "cdf({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            let x = quantile(p);
            assert!((cdf(x) - p).abs() < 1e-14, "p = {p}");
        }
        for p in [1e-12, 1e-8, 1e-4, 1.0 - 1e-9] {
            let x = quantile(p);
            assert!(((cdf(x) - p) / p.min(1.0 - p)).abs() < 1e-6, "p = {p}");
        }
        assert!((quantile(0.75) - JND_INTERNAL).abs() < 1e-15);
        assert_eq!(quantile(0.0), f64::NEG_INFINITY);
        assert!(quantile(1.5).is_nan());
    }

    #[test]
    fn jnd_conversion() {
        assert!((to_jnd(0.674_489_8) - 1.0).abs() < 1e-6);
        assert_eq!(to_jnd(0.0), 0.0);
        for x in [-3.2, 0.1, 7.5] {
            assert!((from_jnd(to_jnd(x)) - x).abs() < 1e-14);
        }
    }
}
