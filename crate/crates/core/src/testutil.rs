use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::algebra::{unitary_exp, ComplexMatrix, HermitianOperator, UnitaryOperator};
use crate::tolerances::Tolerances;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries of `(G + G^dag) / 2` with `G` uniform in the unit square, scaled by `scale`.
pub fn random_hermitian(rng: &mut impl Rng, dim: usize, scale: f64) -> HermitianOperator {
    let mut m = ComplexMatrix::zeros(dim);
    for r in 0..dim {
        m[(r, r)] = Complex64::new(scale * rng.gen_range(-1.0..1.0), 0.0);
        for c in r + 1..dim {
            let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale;
            m[(r, c)] = z;
            m[(c, r)] = z.conj();
        }
    }
    HermitianOperator::new(m, "random").unwrap()
}

pub fn random_unitary(rng: &mut impl Rng, dim: usize) -> UnitaryOperator {
    let g = random_hermitian(rng, dim, 2.0);
    unitary_exp(&g, 1.0, &Tolerances::default()).unwrap()
}
