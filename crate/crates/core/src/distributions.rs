//! Symmetric stable laws used by the emission heads: Cauchy (alpha = 1) and
//! Gaussian (alpha = 2).
//!
//! Negative log-likelihoods drop their additive constants (`log pi` and
//! `0.5 log 2pi`), so values are comparable within one family only.

// Published approximation coefficients are kept digit for digit.
#![allow(clippy::excessive_precision)]

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::{Error, Real, Result};

/// Emission family, identified by its stability index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Cauchy,
    Gaussian,
}

impl Family {
    pub fn alpha(self) -> f64 {
        match self {
            Family::Cauchy => 1.0,
            Family::Gaussian => 2.0,
        }
    }

    pub fn from_alpha(alpha: f64) -> Result<Self> {
        if alpha == 1.0 {
            Ok(Family::Cauchy)
        } else if alpha == 2.0 {
            Ok(Family::Gaussian)
        } else {
            Err(Error::domain(format!("stability index {alpha} is not 1 or 2")))
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Cauchy => "cauchy",
            Family::Gaussian => "gaussian",
        }
    }

    /// Negative log-likelihood without the family constant.
    pub fn nll<T: Real>(self, y: T, loc: T, scale: T) -> T {
        match self {
            Family::Cauchy => cauchy_nll_raw(y, loc, scale),
            Family::Gaussian => gaussian_nll_raw(y, loc, scale),
        }
    }

    /// Partial derivatives of [`Family::nll`] with respect to `(loc, scale)`.
    pub fn nll_grad<T: Real>(self, y: T, loc: T, scale: T) -> (T, T) {
        let r = y - loc;
        match self {
            Family::Cauchy => {
                let denom = r * r + scale * scale;
                let two = T::of(2.0);
                (-two * r / denom, -scale.recip() + two * scale / denom)
            }
            Family::Gaussian => {
                let s2 = scale * scale;
                (-r / s2, scale.recip() - r * r / (s2 * scale))
            }
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cauchy" => Ok(Family::Cauchy),
            "gaussian" | "normal" => Ok(Family::Gaussian),
            other => Err(Error::config(format!("unknown family `{other}`"))),
        }
    }
}

/// Symmetric stable law with location and scale (skewness fixed at zero).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StableParams {
    pub family: Family,
    pub loc: f64,
    pub scale: f64,
}

impl StableParams {
    pub fn new(family: Family, loc: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::domain(format!("scale must be positive, got {scale}")));
        }
        Ok(StableParams { family, loc, scale })
    }

    pub fn cauchy(loc: f64, scale: f64) -> Result<Self> {
        Self::new(Family::Cauchy, loc, scale)
    }

    pub fn gaussian(loc: f64, scale: f64) -> Result<Self> {
        Self::new(Family::Gaussian, loc, scale)
    }

    pub fn alpha(&self) -> f64 {
        self.family.alpha()
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        stable_quantile(p, self)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.loc) / self.scale;
        match self.family {
            Family::Cauchy => 0.5 + z.atan() / PI,
            Family::Gaussian => 0.5 * erfc_approx(-z / std::f64::consts::SQRT_2),
        }
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("scale must be positive, got {scale}")))
    }
}

#[inline]
fn cauchy_nll_raw<T: Real>(y: T, loc: T, scale: T) -> T {
    let r = y - loc;
    (r * r + scale * scale).ln() - scale.ln()
}

#[inline]
fn gaussian_nll_raw<T: Real>(y: T, loc: T, scale: T) -> T {
    let z = (y - loc) / scale;
    scale.ln() + T::of(0.5) * z * z
}

/// `log((y - loc)^2 + scale^2) - log(scale)`.
pub fn cauchy_nll(y: f64, loc: f64, scale: f64) -> Result<f64> {
    check_scale(scale)?;
    Ok(cauchy_nll_raw(y, loc, scale))
}

/// `log(scale) + (y - loc)^2 / (2 scale^2)`.
pub fn gaussian_nll(y: f64, loc: f64, scale: f64) -> Result<f64> {
    check_scale(scale)?;
    Ok(gaussian_nll_raw(y, loc, scale))
}

/// Quantile function of a symmetric stable law at probability `p`.
pub fn stable_quantile(p: f64, params: &StableParams) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability {p} outside (0, 1)")));
    }
    let z = match params.family {
        Family::Cauchy => {
            if p == 0.5 {
                0.0
            } else {
                (PI * (p - 0.5)).tan()
            }
        }
        Family::Gaussian => normal_inv_cdf(p),
    };
    Ok(params.loc + params.scale * z)
}

/// Scale of the sum of independent stable variables with the given scales:
/// `(s1^alpha + s2^alpha)^(1/alpha)`.
pub fn combine_scales(alpha: f64, scale1: f64, scale2: f64) -> Result<f64> {
    if scale1 < 0.0 || scale2 < 0.0 || scale1.is_nan() || scale2.is_nan() {
        return Err(Error::domain(format!(
            "scales must be nonnegative, got {scale1} and {scale2}"
        )));
    }
    if alpha == 1.0 {
        Ok(scale1 + scale2)
    } else if alpha == 2.0 {
        Ok(scale1.hypot(scale2))
    } else {
        Err(Error::domain(format!("stability index {alpha} is not 1 or 2")))
    }
}

/// Law of `a X + b` for `X ~ params`. The scale maps to `|a| scale`.
pub fn affine(params: &StableParams, a: f64, b: f64) -> StableParams {
    StableParams {
        family: params.family,
        loc: a * params.loc + b,
        scale: a.abs() * params.scale,
    }
}

/// Ratio of the Cauchy to the Gaussian NLL gradient magnitude with respect to
/// a label at distance `residual` from the location.
pub fn robustness_ratio(residual: f64, scale: f64) -> Result<f64> {
    check_scale(scale)?;
    let s2 = scale * scale;
    Ok(2.0 * s2 / (residual * residual + s2))
}

// Acklam's rational approximation to the standard normal quantile.
const ACKLAM_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_690e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const ACKLAM_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const ACKLAM_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const ACKLAM_D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];

/// Standard normal inverse CDF: rational approximation followed by one Halley
/// correction step.
pub fn normal_inv_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const P_LOW: f64 = 0.024_25;
    let (a, b, c, d) = (&ACKLAM_A, &ACKLAM_B, &ACKLAM_C, &ACKLAM_D);
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    };
    // Halley refinement against the CDF computed through erfc.
    let e = 0.5 * erfc_approx(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Complementary error function (W. J. Cody's rational Chebyshev fits),
/// relative accuracy near 1e-16 on the real line.
pub fn erfc_approx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    let r = if ax < 0.5 {
        const P: [f64; 5] = [
            3.161_123_743_870_565_6,
            1.138_641_541_510_501_6e2,
            3.774_852_376_853_020_2e2,
            3.209_377_589_138_469_5e3,
            1.857_777_061_846_031_5e-1,
        ];
        const Q: [f64; 4] = [
            2.360_129_095_234_412_1e1,
            2.440_246_379_344_441_7e2,
            1.282_616_526_077_372_3e3,
            2.844_236_833_439_170_6e3,
        ];
        let z = x * x;
        let num = (((P[4] * z + P[0]) * z + P[1]) * z + P[2]) * z + P[3];
        let den = (((z + Q[0]) * z + Q[1]) * z + Q[2]) * z + Q[3];
        return 1.0 - x * num / den;
    } else if ax < 4.0 {
        const P: [f64; 9] = [
            5.641_884_969_886_700_9e-1,
            8.883_149_794_388_375_9,
            6.611_919_063_714_163e1,
            2.986_351_381_974_001_3e2,
            8.819_522_212_417_690_9e2,
            1.712_047_612_634_070_7e3,
            2.051_078_377_826_071_5e3,
            1.230_339_354_797_997_2e3,
            2.153_115_354_744_038_5e-8,
        ];
        const Q: [f64; 8] = [
            1.574_492_611_070_983_5e1,
            1.176_939_508_913_125e2,
            5.371_811_018_620_098_6e2,
            1.621_389_574_566_690_2e3,
            3.290_799_235_733_459_7e3,
            4.362_619_090_143_247e3,
            3.439_367_674_143_721_6e3,
            1.230_339_354_803_749_4e3,
        ];
        let mut num = P[8] * ax;
        let mut den = ax;
        for i in 0..7 {
            num = (num + P[i]) * ax;
            den = (den + Q[i]) * ax;
        }
        let frac = (num + P[7]) / (den + Q[7]);
        scaled_exp(ax) * frac
    } else {
        const P: [f64; 6] = [
            3.053_266_349_612_323_4e-1,
            3.603_448_999_498_044_4e-1,
            1.257_817_261_112_292_6e-1,
            1.608_378_514_874_227_7e-2,
            6.587_491_615_298_378_5e-4,
            1.631_538_713_730_709_7e-2,
        ];
        const Q: [f64; 5] = [
            2.568_520_192_289_822_4,
            1.872_952_849_923_460_4,
            5.279_051_029_514_284_1e-1,
            6.051_834_131_244_131_9e-2,
            2.335_204_976_268_691_8e-3,
        ];
        const FRAC_1_SQRT_PI: f64 = 5.641_895_835_477_562_9e-1;
        let z = 1.0 / (ax * ax);
        let mut num = P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + P[i]) * z;
            den = (den + Q[i]) * z;
        }
        let frac = z * (num + P[4]) / (den + Q[4]);
        scaled_exp(ax) * (FRAC_1_SQRT_PI - frac) / ax
    };
    if x < 0.0 {
        2.0 - r
    } else {
        r
    }
}

// exp(-x^2) evaluated with a split argument to limit cancellation.
fn scaled_exp(x: f64) -> f64 {
    let hi = (x * 16.0).trunc() / 16.0;
    let del = (x - hi) * (x + hi);
    (-hi * hi).exp() * (-del).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn cauchy_nll_examples() {
        assert_eq!(cauchy_nll(0.0, 0.0, 1.0).unwrap(), 0.0);
        assert!((cauchy_nll(1.0, 0.0, 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        // log(4 + 4) - log 2 = log 4
        assert!((cauchy_nll(3.0, 1.0, 2.0).unwrap() - 1.386_294_361_119_890_6).abs() < 1e-14);
        assert!(matches!(cauchy_nll(0.0, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(cauchy_nll(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn gaussian_nll_examples() {
        assert_eq!(gaussian_nll(0.0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(gaussian_nll(1.0, 0.0, 1.0).unwrap(), 0.5);
        assert!((gaussian_nll(3.0, 1.0, 2.0).unwrap() - 1.193_147_180_559_945_4).abs() < 1e-14);
        assert!(gaussian_nll(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn quantile_examples() {
        let c = StableParams::cauchy(0.0, 1.0).unwrap();
        assert_eq!(stable_quantile(0.5, &StableParams::cauchy(3.0, 2.0).unwrap()).unwrap(), 3.0);
        assert_eq!(stable_quantile(0.5, &StableParams::gaussian(-1.0, 2.0).unwrap()).unwrap(), -1.0);
        assert!((stable_quantile(0.75, &c).unwrap() - 1.0).abs() < 1e-15);
        let c2 = StableParams::cauchy(0.0, 2.0).unwrap();
        assert!((stable_quantile(0.9, &c2).unwrap() - 6.155_367_074_350_508).abs() < 1e-12);
        assert!(stable_quantile(0.0, &c).is_err());
        assert!(stable_quantile(1.0, &c).is_err());
        assert!(stable_quantile(f64::NAN, &c).is_err());
    }

    #[test]
    fn normal_quantile_matches_independent_reference() {
        let n = Normal::standard();
        let mut worst: f64 = 0.0;
        for i in 1..100_000 {
            let p = i as f64 / 100_000.0;
            worst = worst.max((normal_inv_cdf(p) - n.inverse_cdf(p)).abs());
        }
        for &p in &[1e-12, 1e-9, 1e-6, 1e-4, 1.0 - 1e-6, 1.0 - 1e-9] {
            worst = worst.max((normal_inv_cdf(p) - n.inverse_cdf(p)).abs());
        }
        assert!(worst < 1e-8, "worst abs error {worst}");
    }

    #[test]
    fn erfc_agrees_with_references() {
        for i in -600..600 {
            let x = i as f64 / 100.0;
            let a = erfc_approx(x);
            let b = statrs::function::erf::erfc(x);
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-3), "x={x} {a} {b}");
        }
        // Reference values from an independent double-precision library.
        assert!((erfc_approx(1.99) - 0.004_888_586_800_383_002).abs() < 1e-18);
        for &(x, want) in &[
            (-2.59, 1.999_750_539_470_943_2),
            (-0.74, 1.704_678_077_854_745_7),
            (0.3, 0.671_373_240_540_872_6),
            (0.5, 0.479_500_122_186_953_5),
            (5.5, 7.357_847_917_974_398e-15),
        ] {
            let got = erfc_approx(x);
            assert!((got - want).abs() <= 4e-16 * want, "x={x} {got} {want}");
        }
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine_scales(1.0, 1.0, 2.0).unwrap(), 3.0);
        assert_eq!(combine_scales(2.0, 3.0, 4.0).unwrap(), 5.0);
        for alpha in [1.0, 2.0] {
            assert_eq!(combine_scales(alpha, 1.7, 0.0).unwrap(), 1.7);
        }
        assert!(combine_scales(1.0, -1.0, 1.0).is_err());
        assert!(combine_scales(1.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn affine_examples() {
        let p = affine(&StableParams::cauchy(0.0, 1.0).unwrap(), 1.0, 5.0);
        assert_eq!((p.loc, p.scale), (5.0, 1.0));
        let p = affine(&StableParams::cauchy(2.0, 3.0).unwrap(), -2.0, 0.0);
        assert_eq!((p.loc, p.scale), (-4.0, 6.0));
        let p = affine(&StableParams::cauchy(1.0, 2.0).unwrap(), 0.5, 1.0);
        assert_eq!((p.loc, p.scale), (1.5, 1.0));
    }

    #[test]
    fn robustness_examples() {
        assert_eq!(robustness_ratio(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(robustness_ratio(2.5, 2.5).unwrap(), 1.0);
        assert!((robustness_ratio(3.0, 1.0).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(robustness_ratio(0.0, 1.0).unwrap(), 2.0);
        assert!(robustness_ratio(1.0, 0.0).is_err());
    }

    #[test]
    fn robustness_bound_on_log_grid() {
        for i in 0..100 {
            let scale = 10f64.powf(-3.0 + 6.0 * i as f64 / 99.0);
            for j in 0..100 {
                let residual = scale * 10f64.powf(4.0 * j as f64 / 99.0);
                let r = robustness_ratio(residual, scale).unwrap();
                assert!(r <= 1.0 + 1e-15, "{residual} {scale} {r}");
                assert!(robustness_ratio(-residual, scale).unwrap() <= 1.0 + 1e-15);
            }
        }
    }

    #[test]
    fn cauchy_nll_minimized_at_label() {
        let y = 0.37;
        let s = 0.8;
        let best = (-2000..=2000)
            .map(|k| y + k as f64 * 1e-3)
            .min_by(|a, b| {
                cauchy_nll(y, *a, s)
                    .unwrap()
                    .partial_cmp(&cauchy_nll(y, *b, s).unwrap())
                    .unwrap()
            })
            .unwrap();
        assert!((best - y).abs() < 1e-12);
    }

    #[test]
    fn nll_gradients_match_finite_differences() {
        for fam in [Family::Cauchy, Family::Gaussian] {
            for &(y, loc, s) in &[(0.3f64, -0.2f64, 0.7f64), (2.0, 0.1, 0.3), (-1.0, 1.5, 2.0)] {
                let (gl, gs) = fam.nll_grad(y, loc, s);
                let h = 1e-6;
                let nl = (fam.nll(y, loc + h, s) - fam.nll(y, loc - h, s)) / (2.0 * h);
                let ns = (fam.nll(y, loc, s + h) - fam.nll(y, loc, s - h)) / (2.0 * h);
                assert!((gl - nl).abs() < 1e-7, "{fam} loc {gl} {nl}");
                assert!((gs - ns).abs() < 1e-7, "{fam} scale {gs} {ns}");
            }
        }
    }

    proptest! {
        #[test]
        fn quantile_monotone_and_symmetric(p in 0.001f64..0.999, q in 0.001f64..0.999,
                                           loc in -50.0f64..50.0, scale in 0.01f64..20.0) {
            for params in [StableParams::cauchy(loc, scale).unwrap(), StableParams::gaussian(loc, scale).unwrap()] {
                let a = stable_quantile(p, &params).unwrap();
                let b = stable_quantile(1.0 - p, &params).unwrap();
                prop_assert!(((a - loc) + (b - loc)).abs() <= 1e-9 * (1.0 + (a - loc).abs()));
                if p < q {
                    prop_assert!(a < stable_quantile(q, &params).unwrap());
                }
            }
        }

        #[test]
        fn combine_commutative_associative(a in 0.0f64..100.0, b in 0.0f64..100.0, c in 0.0f64..100.0) {
            for alpha in [1.0, 2.0] {
                let ab = combine_scales(alpha, a, b).unwrap();
                let ba = combine_scales(alpha, b, a).unwrap();
                prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1e-300));
                let left = combine_scales(alpha, ab, c).unwrap();
                let right = combine_scales(alpha, a, combine_scales(alpha, b, c).unwrap()).unwrap();
                prop_assert!((left - right).abs() <= 1e-12 * left.max(1e-300));
            }
        }
    }
}
