//! Branch-free single-precision `exp` and `ln(1 + u)` that the compiler can
//! vectorize. Used by the hot activation loops.

const LOG2E: f32 = std::f32::consts::LOG2_E;
const LN2_HI: f32 = 0.693_359_4;
const LN2_LO: f32 = -2.121_944_4e-4;
/// `1.5 * 2^23`: adding it rounds to the nearest integer.
const ROUND: f32 = 12_582_912.0;

#[inline(always)]
#[allow(clippy::excessive_precision)]
pub fn exp_f32(x: f32) -> f32 {
    let x = x.clamp(-87.3, 88.7);
    let t = x * LOG2E + ROUND;
    let n = t - ROUND;
    let k = (t.to_bits() as i32).wrapping_sub(ROUND.to_bits() as i32);
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5.000_000_1e-1;
    let y = p * r * r + r + 1.0;
    // Split the power of two so k = -127 near the lower clamp stays normal.
    let half = k >> 1;
    let a = f32::from_bits(((half + 127) as u32) << 23);
    let b = f32::from_bits(((k - half + 127) as u32) << 23);
    y * a * b
}

/// `ln(1 + u)` for `u` in `[0, 1]`.
#[inline(always)]
pub fn ln_1p_unit_f32(u: f32) -> f32 {
    let s = u / (2.0 + u);
    let s2 = s * s;
    let mut p = 1.0f32 / 13.0;
    p = p * s2 + 1.0 / 11.0;
    p = p * s2 + 1.0 / 9.0;
    p = p * s2 + 1.0 / 7.0;
    p = p * s2 + 1.0 / 5.0;
    p = p * s2 + 1.0 / 3.0;
    2.0 * s * (p * s2 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_close_to_std() {
        let mut worst = 0.0f64;
        for i in -870..=880 {
            let x = i as f32 * 0.1 + 0.037;
            let want = (x as f64).exp();
            let got = exp_f32(x) as f64;
            worst = worst.max(((got - want) / want).abs());
        }
        assert!(worst < 5e-7, "{worst}");
        assert_eq!(exp_f32(0.0), 1.0);
        assert!(exp_f32(-1000.0) >= 0.0 && exp_f32(-1000.0) < 1e-37);
        assert!(exp_f32(1000.0).is_finite());
    }

    #[test]
    fn ln_1p_close_to_std() {
        let mut worst = 0.0f64;
        for i in 0..=10_000 {
            let u = i as f32 / 10_000.0;
            let want = (u as f64).ln_1p();
            let got = ln_1p_unit_f32(u) as f64;
            let err = if want == 0.0 { got.abs() } else { ((got - want) / want).abs() };
            worst = worst.max(err);
        }
        assert!(worst < 5e-7, "{worst}");
        assert!(ln_1p_unit_f32(1e-30) > 0.0);
    }
}
