use crate::error::{Error, Result};
use crate::numeric::{BitMask, Matrix, Rng};

/// How an adapter increment interacts with the pruning mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AdapterMode {
    /// Increment is masked: `Ŵ = (W₀ + BA) ⊙ M`. Sparsity survives a merge.
    Sparse,
    /// Classic LoRA on the pruned weights: `Ŵ = W₀ ⊙ M + BA`.
    Dense,
}

impl AdapterMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AdapterMode::Sparse => "sparse",
            AdapterMode::Dense => "dense",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(AdapterMode::Sparse),
            "dense" => Ok(AdapterMode::Dense),
            other => Err(Error::Config(format!("unknown adapter mode {other:?}"))),
        }
    }
}

/// Low-rank pair with `ΔW = B A`, `B: out × r`, `A: r × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adapter {
    pub mode: AdapterMode,
    pub b: Matrix,
    pub a: Matrix,
}

impl Adapter {
    /// `A ~ U(-1/√in, 1/√in)`, `B = 0`, so the increment starts at zero.
    pub fn init(out: usize, inp: usize, rank: usize, mode: AdapterMode, rng: &mut Rng) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Input("adapter rank must be at least 1".into()));
        }
        let bound = 1.0 / (inp as f64).sqrt();
        let a = Matrix::from_fn(rank, inp, |_, _| rng.uniform_range(-bound, bound));
        Ok(Adapter {
            mode,
            b: Matrix::zeros(out, rank),
            a,
        })
    }

    pub fn new(mode: AdapterMode, b: Matrix, a: Matrix) -> Result<Self> {
        if b.cols() != a.rows() || b.cols() == 0 {
            return Err(Error::Dimension(format!(
                "adapter B is {}x{} but A is {}x{}",
                b.rows(),
                b.cols(),
                a.rows(),
                a.cols()
            )));
        }
        Ok(Adapter { mode, b, a })
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.b.rows(), self.a.cols())
    }

    /// `ΔW = B A`.
    pub fn delta(&self) -> Matrix {
        self.b
            .matmul(&self.a)
            .expect("adapter factors have matching inner dimension")
    }

    /// Effective weight of a layer carrying this adapter.
    pub fn apply(&self, w0: &Matrix, mask: &BitMask) -> Result<Matrix> {
        let delta = self.delta();
        match self.mode {
            AdapterMode::Sparse => w0.add(&delta)?.hadamard_mask(mask),
            AdapterMode::Dense => w0.hadamard_mask(mask)?.add(&delta),
        }
    }

    /// Gradients of the loss with respect to `B` and `A` given `∂L/∂Ŵ`.
    ///
    /// Sparse mode routes the weight gradient through the mask first:
    /// `∂L/∂B = (G ⊙ M) Aᵀ`, `∂L/∂A = Bᵀ (G ⊙ M)`.
    pub fn gradients(&self, dw_hat: &Matrix, mask: &BitMask) -> Result<(Matrix, Matrix)> {
        let g = match self.mode {
            AdapterMode::Sparse => dw_hat.hadamard_mask(mask)?,
            AdapterMode::Dense => {
                if dw_hat.shape() != mask.shape() {
                    return Err(Error::Dimension("weight gradient and mask differ".into()));
                }
                dw_hat.clone()
            }
        };
        if g.shape() != self.shape() {
            return Err(Error::Dimension(format!(
                "weight gradient {}x{} for adapter {}x{}",
                g.rows(),
                g.cols(),
                self.b.rows(),
                self.a.cols()
            )));
        }
        let db = g.matmul(&self.a.transpose())?;
        let da = self.b.transpose().matmul(&g)?;
        Ok((db, da))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Matrix {
        Matrix::from_vec(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn zero_b_gives_zero_increment() {
        let mut rng = Rng::new(1);
        let ad = Adapter::init(3, 5, 2, AdapterMode::Sparse, &mut rng).unwrap();
        assert!(ad.delta().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(ad.rank(), 2);
        assert_eq!(ad.shape(), (3, 5));
        let bound = 1.0 / 5f64.sqrt();
        assert!(ad.a.as_slice().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn fully_masked_weight_stays_zero() {
        let ad = Adapter::new(AdapterMode::Sparse, one(1.0), one(3.0)).unwrap();
        let w = ad.apply(&one(2.0), &BitMask::zeros(1, 1)).unwrap();
        assert_eq!(w.as_slice(), &[0.0]);
    }

    #[test]
    fn dense_mode_ignores_mask_on_increment() {
        let ad = Adapter::new(AdapterMode::Dense, one(1.0), one(3.0)).unwrap();
        let w = ad.apply(&one(2.0), &BitMask::zeros(1, 1)).unwrap();
        assert_eq!(w.as_slice(), &[3.0]);
    }

    #[test]
    fn masked_gradient_vanishes() {
        let ad = Adapter::new(AdapterMode::Sparse, one(0.5), one(1.0)).unwrap();
        let (db, da) = ad.gradients(&one(-1.0), &BitMask::zeros(1, 1)).unwrap();
        assert_eq!(db.as_slice(), &[0.0]);
        assert_eq!(da.as_slice(), &[0.0]);
        assert!(Adapter::new(AdapterMode::Sparse, Matrix::zeros(2, 3), Matrix::zeros(2, 3)).is_err());
    }
}
