//! Counter-style random streams.
//!
//! Every random draw in a run is addressed by `(seed, drop, class, id...)`.
//! The seed and drop index select a ChaCha key, the class and link ids select
//! one of its 2^64 streams, so a single link can be regenerated without
//! replaying anything else.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum LinkClass {
    Placement = 1,
    MsBsShadowing = 2,
    BsBsShadowing = 3,
    MsMsShadowing = 4,
    MsBsFading = 5,
    BsBsFading = 6,
    Symbols = 7,
    Noise = 8,
    EstimateError = 9,
    BsPilot = 10,
    MsMsFading = 11,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Streams {
    key: [u8; 32],
}

impl Streams {
    pub fn new(seed: u64, drop: u64) -> Self {
        let mut key = [0u8; 32];
        let mut s = splitmix(seed ^ 0x5453_505f_5345_4544);
        for (i, chunk) in key.chunks_mut(8).enumerate() {
            s = splitmix(s ^ drop.rotate_left(17 * i as u32 + 1));
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        Self { key }
    }

    /// Generator for one link. `ids` identifies the link inside its class.
    pub fn rng(&self, class: LinkClass, ids: &[u64]) -> ChaCha8Rng {
        let mut stream = splitmix(class as u64);
        for &id in ids {
            stream = splitmix(stream ^ id);
        }
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(stream);
        rng
    }
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Circularly symmetric complex Gaussian with the given variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    Complex64::new(s * std_normal(rng), s * std_normal(rng))
}
