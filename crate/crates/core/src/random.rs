//! Seeded random sampling.
//!
//! All randomness flows through ChaCha8 streams so results are reproducible
//! across platforms. Per-run seeds are derived with [`derive_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::qr_thin;
use crate::tensor::{DenseTensor, Matrix};

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `base ^ H(coords)`, where `H` folds the coordinates through [`mix64`].
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for &c in coords {
        h = mix64(h ^ c);
    }
    base ^ h
}

pub fn gaussian_vec(rng: &mut Rng, len: usize) -> Vec<f64> {
    StandardNormal.sample_iter(rng).take(len).collect()
}

pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, gaussian_vec(rng, rows * cols))
}

pub fn gaussian_tensor(rng: &mut Rng, shape: &[usize]) -> DenseTensor {
    let len = shape.iter().product();
    DenseTensor::new(shape.to_vec(), gaussian_vec(rng, len)).expect("valid shape")
}

/// Uniformly distributed `p x r` matrix with orthonormal columns.
///
/// QR of a Gaussian matrix with the triangular factor's diagonal made
/// positive, which is Haar distributed.
pub fn haar_orthonormal(rng: &mut Rng, p: usize, r: usize) -> Matrix {
    assert!(r <= p, "cannot draw {r} orthonormal columns in dimension {p}");
    let (q, _) = qr_thin(&gaussian_matrix(rng, p, r));
    q
}
