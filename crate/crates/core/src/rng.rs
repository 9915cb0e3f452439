//! Seeded random streams.
//!
//! Every stochastic quantity is drawn from a ChaCha8 generator keyed by a
//! user seed and a purpose-specific stream id, so an ensemble seed and an
//! init seed with the same numeric value never share draws. Monte Carlo
//! estimates are split into fixed-size chunks, each with its own stream, and
//! reduced in chunk order; the result does not depend on the thread count.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const STREAM_ENSEMBLE: u64 = 1;
pub const STREAM_INIT: u64 = 2;
pub const STREAM_ROTATION: u64 = 3;
pub const STREAM_POWER: u64 = 4;
pub const STREAM_RESTARTS: u64 = 5;
/// Monte Carlo chunk `k` uses stream `STREAM_MC_BASE + k`.
pub const STREAM_MC_BASE: u64 = 1 << 32;

/// Samples per Monte Carlo chunk.
pub const MC_CHUNK: usize = 2048;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn normal_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn haar_orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, STREAM_ROTATION);
    let g = normal_matrix(d, d, &mut rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Chunk boundaries `(index, start, len)` for `n` samples.
pub fn chunks(n: usize) -> Vec<(u64, usize, usize)> {
    (0..n.div_ceil(MC_CHUNK))
        .map(|k| {
            let start = k * MC_CHUNK;
            (k as u64, start, MC_CHUNK.min(n - start))
        })
        .collect()
}
