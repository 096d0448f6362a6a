//! Dense linear algebra, packed masks, softmax/KL and the seeded generator.

mod mask;
mod matrix;
mod ops;
mod rng;

pub use mask::BitMask;
pub use matrix::{dot, Matrix};
pub use ops::{kl_divergence, log_softmax_row, softmax_row};
pub use rng::Rng;

#[cfg(test)]
mod tests {
    use super::{BitMask, Matrix, Rng};
    use proptest::prelude::*;

    fn mat(seed: u64, r: usize, c: usize) -> Matrix {
        let mut rng = Rng::new(seed);
        Matrix::from_fn(r, c, |_, _| rng.normal() * 3.0)
    }

    fn mask(seed: u64, r: usize, c: usize) -> BitMask {
        let mut rng = Rng::new(seed);
        let bits: Vec<bool> = (0..r * c).map(|_| rng.uniform() < 0.5).collect();
        BitMask::from_bools(r, c, &bits).unwrap()
    }

    proptest! {
        #[test]
        fn mask_is_idempotent(seed in any::<u64>(), r in 1usize..9, c in 1usize..9) {
            let w = mat(seed, r, c);
            let m = mask(seed ^ 1, r, c);
            let once = w.hadamard_mask(&m).unwrap();
            let twice = once.hadamard_mask(&m).unwrap();
            prop_assert_eq!(once.to_le_bytes(), twice.to_le_bytes());
        }

        #[test]
        fn mask_distributes_over_addition(seed in any::<u64>(), r in 1usize..9, c in 1usize..9) {
            let w0 = mat(seed, r, c);
            let dw = mat(seed.wrapping_add(7), r, c);
            let m = mask(seed ^ 3, r, c);
            let lhs = w0.add(&dw).unwrap().hadamard_mask(&m).unwrap();
            let rhs = w0
                .hadamard_mask(&m)
                .unwrap()
                .add(&dw.hadamard_mask(&m).unwrap())
                .unwrap();
            prop_assert_eq!(lhs.to_le_bytes(), rhs.to_le_bytes());
        }

        #[test]
        fn identity_is_exact(seed in any::<u64>(), r in 1usize..9, c in 1usize..9) {
            let x = mat(seed, r, c);
            prop_assert_eq!(Matrix::identity(r).matmul(&x).unwrap().to_le_bytes(), x.to_le_bytes());
        }
    }
}
