//! Paired t statistics and the Student t distribution tail, in f64.
//!
//! The two-sided p-value for |t| with ν degrees of freedom is the
//! regularized incomplete beta function I_x(ν/2, 1/2) at x = ν/(ν+t²),
//! evaluated with a Lentz continued fraction.

use crate::error::{Error, Result};

/// Sample standard deviation (n−1 denominator).
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    libm::sqrt(ss / (n - 1) as f64)
}

/// Paired t statistic over per-pair differences: mean(d) / (sd(d)/√n).
///
/// When every difference is identical the statistic degenerates: a zero mean
/// gives t = 0 (and p = 1), a nonzero mean gives ±∞ (p = 0).
pub fn paired_t(diffs: &[f64]) -> Result<(f64, usize)> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::InvalidArg {
            op: "paired_t",
            detail: alloc::format!("need at least 2 pairs, got {n}"),
        });
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let sd = sample_std(diffs);
    let t = if sd == 0.0 {
        if mean == 0.0 {
            0.0
        } else if mean > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        mean / (sd / libm::sqrt(n as f64))
    };
    Ok((t, n - 1))
}

/// Two-sided p-value for a Student t statistic with `nu` degrees of freedom.
pub fn two_sided_p(t: f64, nu: usize) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    let nu = nu as f64;
    let x = nu / (nu + t * t);
    inc_beta_reg(0.5 * nu, 0.5, x)
}

/// ln Γ(x), Lanczos approximation (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = core::f64::consts::PI;
        return libm::log(pi / libm::sin(pi * x)) - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * libm::log(2.0 * core::f64::consts::PI) + (x + 0.5) * libm::log(t) - t + libm::log(a)
}

/// Regularized incomplete beta I_x(a, b) via the Lentz continued fraction.
fn inc_beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    // front is symmetric under (a,b,x) -> (b,a,1-x), so both branches share it
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
        + a * libm::log(x)
        + b * libm::log(1.0 - x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-14;
    const TINY: f64 = 1e-300;
    let mut c = 1.0f64;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if libm::fabs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        // even step
        let num = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        d = 1.0 + num * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let num = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        d = 1.0 + num * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if libm::fabs(delta - 1.0) < EPS {
            break;
        }
    }
    h
}
