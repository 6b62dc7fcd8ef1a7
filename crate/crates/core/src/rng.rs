use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math::std_normal_quantile;

/// Mixes a master seed with a task index so replicates get independent streams.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stratified standard-normal draws: one draw per equal-probability bin, in random order.
pub fn stratified_normals<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm.into_iter()
        .map(|k| {
            let u: f64 = rng.random();
            let p = ((k as f64 + u) / n as f64).clamp(1e-300, 1.0 - 1e-16);
            std_normal_quantile(p)
        })
        .collect()
}
