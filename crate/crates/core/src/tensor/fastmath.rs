//! Branch-free `tanh`, several times faster than the libm call on hot MLP
//! paths and within one ulp or so of it.

const INV_FACT: [f64; 14] = [
    1.0,
    1.0,
    1.0 / 2.0,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5040.0,
    1.0 / 40320.0,
    1.0 / 362880.0,
    1.0 / 3628800.0,
    1.0 / 39916800.0,
    1.0 / 479001600.0,
    1.0 / 6227020800.0,
];

/// `tanh(x) = −m / (2 + m)` with `m = expm1(−2|x|)`. The exponential uses
/// `2ⁿ · e^r` with `|r| ≤ ln 2 / 2` and a degree-13 Taylor polynomial for
/// `expm1(r)`, so there is no cancellation near zero.
#[inline(always)]
pub(crate) fn tanh(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    // 1.5 · 2⁵², for round-to-nearest by addition.
    const MAGIC: f64 = 6_755_399_441_055_744.0;
    let y = -2.0 * x.abs().min(20.0);
    let t = y * std::f64::consts::LOG2_E + MAGIC;
    let n = t - MAGIC;
    let r = y - n * LN2_HI - n * LN2_LO;
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    let mut p = INV_FACT[13];
    for c in INV_FACT[1..13].iter().rev() {
        p = p * r + c;
    }
    let m = p * r * scale + (scale - 1.0);
    let v = (-m / (2.0 + m)).copysign(x);
    if x.is_nan() {
        x
    } else {
        v
    }
}
