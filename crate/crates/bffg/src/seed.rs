//! Splittable seeds and innovation streams.
//!
//! A [`Seed`] is a 64-bit counter-based key. Splitting hashes the key with two
//! different domain constants, so the children are independent streams and
//! the parent can be discarded. Every random draw in a forward pass is driven
//! by an innovation vector of standard normals, which makes the guided sample
//! a deterministic function of that vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub type Rng64 = ChaCha8Rng;

const LEFT: u64 = 0x243f_6a88_85a3_08d3;
const RIGHT: u64 = 0x1319_8a2e_0370_7344;
const INDEX: u64 = 0xa409_3822_299f_31d0;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed(pub u64);

impl Seed {
    pub fn new(key: u64) -> Self {
        Seed(mix(key))
    }

    /// The pair `(r(z), r'(z))`.
    pub fn split(self) -> (Seed, Seed) {
        (Seed(mix(self.0 ^ LEFT)), Seed(mix(self.0 ^ RIGHT)))
    }

    /// The `i`-th child of this seed; children with distinct indices are
    /// independent of each other and of both halves of [`Seed::split`].
    pub fn derive(self, i: u64) -> Seed {
        Seed(mix(mix(self.0 ^ INDEX).wrapping_add(i)))
    }

    pub fn rng(self) -> Rng64 {
        Rng64::seed_from_u64(self.0)
    }

    /// A vector of `n` standard normal innovations.
    pub fn normals(self, n: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }
}

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Source of randomness consumed by a forward pass.
pub trait Innovations {
    fn normal(&mut self) -> f64;
    /// A uniform in the open unit interval.
    fn uniform(&mut self) -> f64;
    /// A generator for samplers that need a random number of draws
    /// (rejection samplers). Consumes one innovation.
    fn substream(&mut self) -> Rng64;
}

/// Innovations read from a fixed vector of standard normals. Uniforms are
/// obtained through the normal distribution function so that one pCN kernel
/// serves every edge type.
pub struct NormalInnovations<'a> {
    z: &'a [f64],
    pos: usize,
}

impl<'a> NormalInnovations<'a> {
    pub fn new(z: &'a [f64]) -> Self {
        NormalInnovations { z, pos: 0 }
    }

    pub fn consumed(&self) -> usize {
        self.pos
    }

    fn next(&mut self) -> f64 {
        let v = *self
            .z
            .get(self.pos)
            .expect("innovation vector shorter than the innovation layout");
        self.pos += 1;
        v
    }
}

impl Innovations for NormalInnovations<'_> {
    fn normal(&mut self) -> f64 {
        self.next()
    }

    fn uniform(&mut self) -> f64 {
        normal_cdf(self.next()).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }

    fn substream(&mut self) -> Rng64 {
        Seed::new(self.next().to_bits()).rng()
    }
}

/// Innovations drawn directly from a generator.
pub struct RngInnovations<'a>(pub &'a mut Rng64);

impl Innovations for RngInnovations<'_> {
    fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.0.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    fn substream(&mut self) -> Rng64 {
        Seed::new(self.0.random()).rng()
    }
}
