//! Posterior samplers.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Inverse-gamma distribution with shape `alpha` and scale `beta`:
/// if `G ~ Gamma(alpha, 1)` then `beta / G ~ InverseGamma(alpha, beta)`.
/// The mean is `beta / (alpha - 1)` for `alpha > 1`.
#[derive(Clone, Copy, Debug)]
pub struct InverseGamma {
    gamma: Gamma<f64>,
    scale: f64,
}

impl InverseGamma {
    pub fn new(shape: f64, scale: f64) -> Option<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return None;
        }
        Gamma::new(shape, 1.0).ok().map(|gamma| InverseGamma { gamma, scale })
    }
}

impl Distribution<f64> for InverseGamma {
    fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = self.gamma.sample(rng);
        // tiny shapes can underflow the gamma draw
        if g > 0.0 {
            self.scale / g
        } else {
            f64::MAX
        }
    }
}

pub fn standard_normal(rng: &mut dyn RngCore) -> f64 {
    StandardNormal.sample(rng)
}

pub fn standard_normal_vector(dim: usize, rng: &mut dyn RngCore) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| standard_normal(rng))
}

/// Lower Cholesky factor of a symmetric matrix. On failure retries once with
/// `1e-10 * I` added to the diagonal.
pub fn cholesky_lower_with_jitter(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(c) = sym.clone().cholesky() {
        return Some(c.l());
    }
    let n = sym.nrows();
    (sym + DMatrix::identity(n, n) * 1e-10).cholesky().map(|c| c.l())
}

/// Draws from `N(mean, L L^T)` given the lower factor `L`.
pub fn sample_mvn(mean: &DVector<f64>, lower: &DMatrix<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
    let z = standard_normal_vector(mean.len(), rng);
    mean + lower * z
}
