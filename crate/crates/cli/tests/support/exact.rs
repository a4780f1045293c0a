//! Reference p-values in exact integer arithmetic.
//!
//! Binomial sums are exact integers over `100^n` (alpha = a/100); logs are
//! taken in 256-bit fixed point via `ln m = 2 atanh((m-1)/(m+1))`.

use num_bigint::{BigInt, Sign};
use num_traits::{Float, One, Signed, ToPrimitive, Zero};

const PREC: u64 = 256;

fn one() -> BigInt {
    BigInt::one() << PREC
}

/// `atanh(z)` for a fixed-point `0 <= z < 1/2`.
fn atanh(z: &BigInt) -> BigInt {
    let z2 = (z * z) >> PREC;
    let mut power = z.clone();
    let mut sum = z.clone();
    let mut k = 1u64;
    loop {
        power = (&power * &z2) >> PREC;
        if power.is_zero() {
            return sum;
        }
        sum += &power / BigInt::from(2 * k + 1);
        k += 1;
    }
}

fn ln2() -> BigInt {
    atanh(&(one() / 3)) * 2
}

/// Fixed-point natural log of a positive integer.
pub fn ln_int(x: &BigInt) -> BigInt {
    assert!(x.is_positive());
    let bits = x.bits();
    // m = x / 2^(bits-1) in [1, 2), scaled by 2^PREC.
    let m = if bits - 1 > PREC {
        x >> (bits - 1 - PREC)
    } else {
        x << (PREC - (bits - 1))
    };
    let z = ((&m - one()) << PREC) / (&m + one());
    ln2() * BigInt::from(bits - 1) + atanh(&z) * 2
}

/// Exact rational `(num, den)` of a finite non-negative double.
pub fn rational(x: f64) -> (BigInt, BigInt) {
    let (mantissa, exp, sign) = x.integer_decode();
    assert!(sign > 0 || mantissa == 0);
    let m = BigInt::from(mantissa);
    if exp >= 0 {
        (m << exp as u64, BigInt::one())
    } else {
        (m, BigInt::one() << (-exp) as u64)
    }
}

fn ln_ratio(num: &BigInt, den: &BigInt) -> BigInt {
    ln_int(num) - ln_int(den)
}

fn to_f64(fixed: &BigInt) -> f64 {
    // Keep 64 fractional bits so the conversion stays inside f64 range.
    (fixed >> (PREC - 64)).to_f64().unwrap() / 2f64.powi(64)
}

/// `-n h1(r, a/100)` in fixed point for `r < a/100`.
fn ln_hoeffding(r: f64, n: u64, a: u64) -> BigInt {
    let (rn, rd) = rational(r);
    let (an, ad) = (BigInt::from(a), BigInt::from(100u64));
    let mut h = BigInt::zero();
    if !rn.is_zero() {
        // r ln(r / alpha) = (rn/rd) ln(rn*ad / (rd*an))
        h += ln_ratio(&(&rn * &ad), &(&rd * &an)) * &rn / &rd;
    }
    // (1-r) ln((1-r)/(1-alpha))
    let qn = &rd - &rn;
    let bn = &ad - &an;
    h += ln_ratio(&(&qn * &ad), &(&rd * &bn)) * &qn / &rd;
    -(h * BigInt::from(n))
}

/// `ln P(Bin(n, a/100) <= k)` in fixed point, summing whichever tail is
/// shorter.
fn ln_binom_cdf(k: u64, n: u64, a: u64) -> BigInt {
    let b = 100 - a;
    let total = num_traits::pow(BigInt::from(100u64), n as usize);
    if k >= n {
        return BigInt::zero();
    }
    if k <= n / 2 {
        // term_j = C(n,j) a^j b^(n-j)
        let mut term = num_traits::pow(BigInt::from(b), n as usize);
        let mut sum = term.clone();
        for j in 1..=k {
            term = term * BigInt::from((n - j + 1) * a) / BigInt::from(j * b);
            sum += &term;
        }
        ln_int(&sum) - ln_int(&total)
    } else {
        // Upper tail j = n, n-1, ..., k+1.
        let mut term = num_traits::pow(BigInt::from(a), n as usize);
        let mut upper = term.clone();
        for j in (k + 1..n).rev() {
            term = term * BigInt::from((j + 1) * b) / BigInt::from((n - j) * a);
            upper += &term;
        }
        let lower = &total - upper;
        if lower.sign() != Sign::Plus {
            panic!("empty lower tail");
        }
        ln_int(&lower) - ln_int(&total)
    }
}

/// Smallest integer `>= n * r`, treating `r` as an exact rational.
pub fn exact_ceil(n: u64, r: f64) -> u64 {
    let (rn, rd) = rational(r);
    let prod = rn * BigInt::from(n);
    let q = &prod / &rd;
    let q = if (&q * &rd) == prod { q } else { q + 1 };
    q.to_u64().unwrap()
}

/// Exact `ln p` for risk `r`, calibration size `n`, alpha `a/100`, with the
/// binomial index `k` given explicitly.
pub fn ln_p_value(r: f64, k: u64, n: u64, a: u64) -> f64 {
    let alpha = BigInt::from(a);
    let (rn, rd) = rational(r);
    let below = rn * BigInt::from(100u64) < alpha * rd;
    let ln_b = ln_binom_cdf(k, n, a) + one();
    let best = if below {
        let ln_h = ln_hoeffding(r, n, a);
        if ln_h < ln_b {
            ln_h
        } else {
            ln_b
        }
    } else {
        ln_b
    };
    to_f64(&best).min(0.0)
}

pub fn self_check() {
    let ln10 = to_f64(&ln_int(&BigInt::from(10)));
    assert!((ln10 - std::f64::consts::LN_10).abs() < 1e-15);
    // 0.9^1000 via the lower tail at k = 0.
    let v = to_f64(&ln_binom_cdf(0, 1000, 10));
    assert!((v - 1000.0 * 0.9f64.ln()).abs() < 1e-11, "{v}");
    // Frozen reference: P(Bin(100, 0.1) <= 10) = 0.583155512266491803.
    let v = to_f64(&ln_binom_cdf(10, 100, 10)).exp();
    assert!((v / 0.583_155_512_266_491_8 - 1.0).abs() < 1e-15, "{v}");
    // Frozen reference: h1(0.05, 0.1) = 0.016706501178764713940.
    let v = -to_f64(&ln_hoeffding(0.05, 1, 10));
    assert!((v / 0.016_706_501_178_764_714 - 1.0).abs() < 1e-15, "{v}");
    // Upper-tail branch agrees with the lower-tail one.
    let a = to_f64(&ln_binom_cdf(60, 100, 50));
    let (total, mut sum, mut term) = (
        num_traits::pow(BigInt::from(100u64), 100),
        BigInt::zero(),
        num_traits::pow(BigInt::from(50u64), 100),
    );
    for j in 0..=60u64 {
        if j > 0 {
            term = term * BigInt::from((100 - j + 1) * 50) / BigInt::from(j * 50);
        }
        sum += &term;
    }
    let b = to_f64(&(ln_int(&sum) - ln_int(&total)));
    assert!((a - b).abs() < 1e-15);
}
