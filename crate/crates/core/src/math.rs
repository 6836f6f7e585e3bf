//! Scalar float helpers routed through `libm` so results are identical on
//! every platform, plus the small matmul kernel the conv/linear ops share.

/// sign(x) with sign(0) = 0, so zero-gradient pixels are never perturbed.
#[inline]
pub fn sign(x: f32) -> f32 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub fn abs(x: f32) -> f32 {
    libm::fabsf(x)
}

#[inline]
pub fn sqrt(x: f32) -> f32 {
    libm::sqrtf(x)
}

#[inline]
pub fn exp(x: f32) -> f32 {
    libm::expf(x)
}

#[inline]
pub fn ln(x: f32) -> f32 {
    libm::logf(x)
}

#[inline]
pub fn tanh(x: f32) -> f32 {
    libm::tanhf(x)
}

#[inline]
pub fn floor(x: f32) -> f32 {
    libm::floorf(x)
}

#[inline]
pub fn clamp(x: f32, lo: f32, hi: f32) -> f32 {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

#[inline]
pub fn max(a: f32, b: f32) -> f32 {
    if a > b {
        a
    } else {
        b
    }
}

/// tanh-approximation GELU; these two constants define the curve exactly.
pub const GELU_SQRT_2_OVER_PI: f32 = 0.797_884_56;
pub const GELU_CUBIC: f32 = 0.044_715;

#[inline]
pub fn gelu(x: f32) -> f32 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + tanh(u))
}

/// d/dx of the tanh-approximation GELU.
#[inline]
pub fn gelu_grad(x: f32) -> f32 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = tanh(u);
    let du = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// out = a · b, with a: (m,k), b: (k,n), out: (m,n), all row-major.
///
/// The k-middle loop keeps the innermost walk contiguous over `b` and `out`
/// so the compiler vectorizes it; every output element is accumulated in the
/// same order regardless of call site.
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    matmul_acc(a, b, m, k, n, out);
}

/// out += a · b
pub fn matmul_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row.iter()) {
                *o += a_ip * b_pj;
            }
        }
    }
}

/// out = a · bᵀ, with a: (m,k), b: (n,k), out: (m,n).
pub fn matmul_bt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (&x, &y) in a_row.iter().zip(b_row.iter()) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
}

/// out = aᵀ · b, with a: (k,m), b: (k,n), out: (m,n).
pub fn matmul_at(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row.iter()) {
                *o += a_pi * b_pj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_is_zero_at_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(3.5), 1.0);
        assert_eq!(sign(-0.001), -1.0);
    }

    #[test]
    fn matmul_small() {
        // (2x3) x (3x2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut out = [0.0f32; 4];
        matmul(&a, &b, 2, 3, 2, &mut out);
        assert_eq!(out, [58.0, 64.0, 139.0, 154.0]);

        // aᵀ · b with a stored as (3x2): matmul_at(aT...) where aT is a viewed (k=3, m=2)
        let mut out_at = [0.0f32; 4];
        matmul_at(&a, &b, 2, 3, 2, &mut out_at);
        // aᵀ here means a interpreted as (3 rows, 2 cols): aᵀ·b = (2x3)·(3x2)... check by hand:
        // a as (3,2) = [[1,2],[3,4],[5,6]]; aᵀ = [[1,3,5],[2,4,6]]; aᵀ·b = [[1*7+3*9+5*11, ...]]
        assert_eq!(out_at, [89.0, 98.0, 116.0, 128.0]);

        // a · bᵀ with b stored as (2x3)
        let mut out_bt = [0.0f32; 4];
        matmul_bt(&a, &b, 2, 3, 2, &mut out_bt);
        // b as (2,3) = [[7,8,9],[10,11,12]]; a·bᵀ = [[1*7+2*8+3*9, 1*10+2*11+3*12], ...]
        assert_eq!(out_bt, [50.0, 68.0, 122.0, 167.0]);
    }

    #[test]
    fn gelu_matches_reference_points() {
        // reference values computed from the tanh approximation in f64
        assert!((gelu(0.0) - 0.0).abs() < 1e-7);
        assert!((gelu(1.0) - 0.841_192).abs() < 1e-5);
        assert!((gelu(-1.0) - (-0.158_808)).abs() < 1e-5);
    }
}
