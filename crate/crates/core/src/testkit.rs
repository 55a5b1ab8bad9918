//! Seeded random instances shared by the tests, the acceptance suite and the
//! benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{CMatrix, HermitianScm, C64};

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Circular complex Gaussian entries with unit variance.
pub fn random_vector<R: Rng>(rng: &mut R, m: usize) -> Vec<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..m)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re * s, im * s)
        })
        .collect()
}

/// Random Hermitian positive-definite matrix `G·Gᴴ/M + 0.1·I`.
pub fn random_hpd<R: Rng>(rng: &mut R, m: usize) -> HermitianScm {
    let g = CMatrix::from_row_major(m, m, random_vector(rng, m * m)).expect("square");
    let mut a = g.matmul(&g.adjoint()).expect("square").scale_real(1.0 / m as f64);
    for i in 0..m {
        a[(i, i)] += C64::new(0.1, 0.0);
    }
    HermitianScm::new(a).expect("square")
}

/// Rank-1 source SCM `σ²·h·hᴴ` with a random steering vector.
pub fn random_rank1<R: Rng>(rng: &mut R, m: usize) -> (HermitianScm, Vec<C64>, f64) {
    let h = random_vector(rng, m);
    let power: f64 = rng.random_range(0.1..10.0);
    let scaled: Vec<C64> = h.iter().map(|v| v * power.sqrt()).collect();
    (HermitianScm::outer(&scaled), h, power)
}
