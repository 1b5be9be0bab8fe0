//! Linear layers with optional low-rank adapters.
//!
//! An adapted layer computes `x·W + (alpha / r)·(x·A)·B` with `W` frozen,
//! `A: d_in × r` randomly initialized and `B: r × d_out` zero-initialized,
//! so a freshly adapted layer behaves exactly like the base layer.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::autograd::{Tape, Var};
use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adapter {
    pub rank: usize,
    pub alpha: f64,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

impl Adapter {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub adapter: Option<Adapter>,
}

pub(crate) fn gaussian<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

impl Linear {
    pub fn random<R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            weight: gaussian(d_in, d_out, 1.0 / (d_in as f64).sqrt(), rng),
            adapter: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.ncols()
    }

    /// Adds a rank-`rank` adapter; `rank` may not exceed `min(d_in, d_out)`.
    pub fn attach_adapter<R: Rng>(
        &mut self,
        rank: usize,
        alpha: f64,
        rng: &mut R,
    ) -> Result<(), ModelError> {
        let limit = self.d_in().min(self.d_out());
        if rank == 0 || rank > limit {
            return Err(ModelError::Config(format!(
                "adapter rank {rank} must be in 1..={limit} for a {}×{} layer",
                self.d_in(),
                self.d_out()
            )));
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(ModelError::Config(format!(
                "adapter alpha must be positive, got {alpha}"
            )));
        }
        self.adapter = Some(Adapter {
            rank,
            alpha,
            a: gaussian(self.d_in(), rank, 1.0 / (self.d_in() as f64).sqrt(), rng),
            b: Array2::zeros((rank, self.d_out())),
        });
        Ok(())
    }

    /// Records the layer on the tape. Returns the output and, when adapted,
    /// the `(A, B)` leaves so their gradients can be read back.
    pub(crate) fn forward(&self, tape: &mut Tape, x: Var) -> (Var, Option<(Var, Var)>) {
        let w = tape.leaf(self.weight.clone(), false);
        let base = tape.matmul(x, w);
        match &self.adapter {
            None => (base, None),
            Some(ad) => {
                let a = tape.leaf(ad.a.clone(), true);
                let b = tape.leaf(ad.b.clone(), true);
                let xa = tape.matmul(x, a);
                let xab = tape.matmul(xa, b);
                let scaled = tape.scale(xab, ad.scale());
                (tape.add(base, scaled), Some((a, b)))
            }
        }
    }
}
