//! Fixtures shared by the benchmarks.

use aric::{Codebook, Image};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Smooth RGB test card with a little noise.
pub fn test_image(width: u32, height: u32, seed: u64) -> Image {
    let mut r = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut bytes = Vec::with_capacity((width * height * 3) as usize);
    for y in 0..height {
        for x in 0..width {
            for c in 0..3u32 {
                let v = 0.5 + 0.35 * ((x + 7 * c) as f64 * 0.031).sin() * ((y + 3 * c) as f64 * 0.017).cos();
                let noise = (r.next_u64() >> 60) as f64 / 255.0;
                bytes.push(((v + noise) * 255.0).clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::from_bytes(width, height, 3, &bytes).expect("valid dimensions")
}

/// Codebook of random entries; entry 0 is zero so it serves both modes.
pub fn random_codebook(size: usize, patch: u8, seed: u64) -> Codebook {
    let mut r = Xoshiro256PlusPlus::seed_from_u64(seed);
    let dim = patch as usize * patch as usize * 3;
    let mut v: Vec<f64> = (0..size * dim).map(|_| (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.25).collect();
    v[..dim].fill(0.0);
    Codebook::new(patch, 3, &v, true).expect("valid codebook")
}
