//! Seeded random streams.
//!
//! Every stochastic routine draws from a ChaCha8 generator keyed by a user
//! seed plus a stream id, so independent sub-computations (replications,
//! chains, iterations) are reproducible regardless of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Uniform point of the probability simplex (flat Dirichlet), via normalized
/// unit exponentials.
pub fn simplex_point<R: rand::Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim)
        .map(|_| {
            // gen::<f64>() is in [0, 1); 1 - u keeps the log finite
            let u: f64 = rng.gen();
            -(1.0 - u).ln()
        })
        .collect();
    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total;
    }
    v
}
