//! Seeded, platform-independent randomness.
//!
//! Everything random in this crate draws from ChaCha8 keyed by a 64-bit seed,
//! with the ChaCha stream id separating independent consumers (frames,
//! trials). Output is identical across platforms for a fixed seed and stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use rand_chacha::ChaCha8Rng as PortableRng;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A standard Gaussian vector projected onto the unit sphere.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f32 {
    (rng.sample::<f64, _>(StandardNormal) * sigma) as f32
}
