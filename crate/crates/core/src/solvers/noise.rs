use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Operators;
use crate::error::{Error, Result};
use crate::operators::{check_len, norm2, LinearMap};
use crate::phantoms::PhantomPair;

/// Noisy line and toric sinograms; `b1` is kept without the block weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyData {
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub eta: f64,
    pub seed: u64,
}

impl NoisyData {
    /// Perturbs the stacked vector `(b1, b2)` with one shared noise scale.
    pub fn new(b1: &[f64], b2: &[f64], eta: f64, seed: u64) -> Result<Self> {
        let stacked: Vec<f64> = b1.iter().chain(b2).copied().collect();
        let mut noisy = add_noise(&stacked, eta, seed)?;
        let b2 = noisy.split_off(b1.len());
        Ok(Self { b1: noisy, b2, eta, seed })
    }
}

/// Exact transmission and scatter data `(R_L mu, T n_e)` of a phantom.
pub fn simulate_data(p: &PhantomPair, ops: &Operators) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(ops.image.len(), p.grid.len())?;
    if p.grid != ops.image {
        return Err(Error::InvalidParameter("phantom grid differs from operator grid".into()));
    }
    Ok((ops.radon_limited.apply(&p.mu.data)?, ops.toric.apply(&p.n_e.data)?))
}

/// `b + eta * |b| * v / sqrt(len)` with `v` standard normal from `seed`.
pub fn add_noise(b: &[f64], eta: f64, seed: u64) -> Result<Vec<f64>> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise level {eta} must be finite and nonnegative")));
    }
    if eta == 0.0 || b.is_empty() {
        return Ok(b.to_vec());
    }
    let scale = eta * norm2(b) / (b.len() as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(b.iter()
        .map(|v| {
            let g: f64 = StandardNormal.sample(&mut rng);
            v + scale * g
        })
        .collect())
}
