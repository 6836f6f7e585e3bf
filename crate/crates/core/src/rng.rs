//! Seeded, platform-independent random number generation.
//!
//! All randomness in the toolkit flows through [`DetRng`], a ChaCha8 stream
//! keyed with `seed_from_u64`. Floats are derived from the top 24 bits of
//! each 32-bit draw and shaped with `libm`, so a given seed reproduces the
//! same tensor bit-for-bit everywhere.

use alloc::vec::Vec;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

const F32_FROM_U24: f32 = 1.0 / (1 << 24) as f32;
const TWO_PI: f32 = core::f32::consts::TAU;

/// Distribution selector for [`rng_fill`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dist {
    Uniform { a: f32, b: f32 },
    Normal { mu: f32, sigma: f32 },
}

pub struct DetRng {
    inner: ChaCha8Rng,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Derive an independent stream for a labelled sub-task (per-epoch
    /// shuffles, per-class draws) without correlating with the parent.
    pub fn derive(seed: u64, stream: u64) -> Self {
        DetRng { inner: ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)) }
    }

    pub fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    /// Uniform in [0, 1), 24-bit resolution.
    pub fn unit(&mut self) -> f32 {
        (self.next_u32() >> 8) as f32 * F32_FROM_U24
    }

    pub fn uniform(&mut self, a: f32, b: f32) -> f32 {
        a + (b - a) * self.unit()
    }

    /// Box–Muller; consumes exactly two draws per sample.
    pub fn normal(&mut self, mu: f32, sigma: f32) -> f32 {
        let u1 = 1.0 - self.unit(); // (0, 1]; keeps ln finite
        let u2 = self.unit();
        let r = math::sqrt(-2.0 * math::ln(u1));
        mu + sigma * r * libm::cosf(TWO_PI * u2)
    }

    /// Uniform integer in [0, n) via the fixed-point multiply trick.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u32() as u64 * n as u64) >> 32) as usize
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.below(i + 1);
            slice.swap(i, j);
        }
    }
}

/// Fill a fresh tensor from a seeded distribution.
pub fn rng_fill(shape: &[usize], dist: Dist, seed: u64) -> Result<Tensor> {
    match dist {
        Dist::Uniform { a, b } if a > b => {
            return Err(Error::InvalidArg {
                op: "rng_fill",
                detail: alloc::format!("uniform bounds a={a} > b={b}"),
            })
        }
        Dist::Normal { sigma, .. } if sigma < 0.0 => {
            return Err(Error::InvalidArg {
                op: "rng_fill",
                detail: alloc::format!("normal sigma={sigma} < 0"),
            })
        }
        _ => {}
    }
    let n: usize = shape.iter().product();
    let mut rng = DetRng::new(seed);
    let mut data = Vec::with_capacity(n);
    match dist {
        Dist::Uniform { a, b } => {
            for _ in 0..n {
                data.push(rng.uniform(a, b));
            }
        }
        Dist::Normal { mu, sigma } => {
            for _ in 0..n {
                data.push(rng.normal(mu, sigma));
            }
        }
    }
    Tensor::new(shape.to_vec(), data)
}
