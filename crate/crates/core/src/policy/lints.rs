use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use super::sampling::{cholesky_lower_with_jitter, standard_normal_vector};
use super::{argmax_candidate, Policy, PolicyKind};
use crate::error::{Error, Result};
use crate::model::ContextVector;
use crate::seed::hex_digest;

pub const DEFAULT_REFRESH_INTERVAL: usize = 1000;

/// Per-exercise ridge-regression posterior.
///
/// `a` and `b` are always current. `omega`, `a_inv` and `cov_factor` (the
/// lower Cholesky factor of `a_inv`) are a cache refreshed by
/// [`LinArmState::refresh`]; `staleness` counts updates since then.
#[derive(Clone, Debug)]
pub struct LinArmState {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub omega: DVector<f64>,
    pub a_inv: DMatrix<f64>,
    cov_factor: DMatrix<f64>,
    pub staleness: usize,
}

impl LinArmState {
    pub fn new(dim: usize, lambda: f64) -> Self {
        LinArmState {
            a: DMatrix::identity(dim, dim) * lambda,
            b: DVector::zeros(dim),
            omega: DVector::zeros(dim),
            a_inv: DMatrix::identity(dim, dim) / lambda,
            cov_factor: DMatrix::identity(dim, dim) / lambda.sqrt(),
            staleness: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `A += x x^T`, `b += r x`. The cached posterior is left stale.
    pub fn update(&mut self, x: &DVector<f64>, reward: f64) {
        self.a.ger(1.0, x, x, 1.0);
        self.b.axpy(reward, x, 1.0);
        self.staleness += 1;
    }

    /// Recomputes `A^-1`, `omega = A^-1 b` and the covariance factor.
    /// `arm` only labels the error.
    pub fn refresh(&mut self, arm: usize) -> Result<()> {
        let sym = (&self.a + self.a.transpose()) * 0.5;
        let chol = sym
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { arm })?;
        let a_inv = chol.inverse();
        let omega = &a_inv * &self.b;
        let cov_factor =
            cholesky_lower_with_jitter(&a_inv).ok_or(Error::NotPositiveDefinite { arm })?;
        self.a_inv = a_inv;
        self.omega = omega;
        self.cov_factor = cov_factor;
        self.staleness = 0;
        Ok(())
    }

    /// `x^T theta` for `theta ~ N(omega, v^2 A^-1)` using the cached posterior.
    pub fn sample_score(&self, x: &DVector<f64>, v: f64, rng: &mut dyn RngCore) -> f64 {
        let z = standard_normal_vector(self.dim(), rng);
        let theta = &self.omega + (&self.cov_factor * z) * v;
        x.dot(&theta)
    }

    /// `x^T omega` using the cached posterior mean.
    pub fn mean_score(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.omega)
    }
}

/// Linear Thompson sampling with one ridge model per exercise and a fixed
/// exploration scale `v`.
///
/// Cached posteriors are refreshed for every arm with pending updates once
/// per `refresh_interval` policy updates, and on `flush`.
#[derive(Clone, Debug)]
pub struct LinearThompson {
    dim: usize,
    lambda: f64,
    v: f64,
    refresh_interval: usize,
    // None until the arm receives its first update
    arms: Vec<Option<LinArmState>>,
    prior: LinArmState,
    dirty: Vec<usize>,
    steps: usize,
}

impl LinearThompson {
    pub fn new(
        dim: usize,
        exercises: usize,
        lambda: f64,
        v: f64,
        refresh_interval: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("LinTS needs a positive context dimension".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("v must be non-negative, got {v}")));
        }
        if refresh_interval == 0 {
            return Err(Error::Config("refresh interval must be at least 1".into()));
        }
        Ok(LinearThompson {
            dim,
            lambda,
            v,
            refresh_interval,
            arms: vec![None; exercises],
            prior: LinArmState::new(dim, lambda),
            dirty: Vec::new(),
            steps: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn arm(&self, exercise: usize) -> &LinArmState {
        self.arms
            .get(exercise)
            .and_then(Option::as_ref)
            .unwrap_or(&self.prior)
    }

    /// Replaces an arm's state, e.g. to set up a known posterior in tests.
    pub fn set_arm(&mut self, exercise: usize, state: LinArmState) -> Result<()> {
        if state.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: state.dim(),
            });
        }
        if exercise >= self.arms.len() {
            self.arms.resize(exercise + 1, None);
        }
        self.arms[exercise] = Some(state);
        Ok(())
    }

    fn context_vector(&self, context: Option<&ContextVector>) -> Result<DVector<f64>> {
        let x = context.ok_or(Error::MissingContext)?;
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.dim(),
            });
        }
        Ok(DVector::from_column_slice(x.as_slice()))
    }

    fn refresh_dirty(&mut self) -> Result<()> {
        for a in std::mem::take(&mut self.dirty) {
            if let Some(arm) = self.arms[a].as_mut() {
                arm.refresh(a)?;
            }
        }
        Ok(())
    }
}

impl Policy for LinearThompson {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Lints
    }

    fn select(
        &mut self,
        _user: usize,
        context: Option<&ContextVector>,
        candidates: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<usize> {
        if candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let x = self.context_vector(context)?;
        let scores: Vec<f64> = candidates
            .iter()
            .map(|&a| self.arm(a).sample_score(&x, self.v, rng))
            .collect();
        argmax_candidate(candidates, &scores)
    }

    fn update(
        &mut self,
        _user: usize,
        context: Option<&ContextVector>,
        exercise: usize,
        reward: f64,
    ) -> Result<()> {
        let x = self.context_vector(context)?;
        if exercise >= self.arms.len() {
            self.arms.resize(exercise + 1, None);
        }
        let (dim, lambda) = (self.dim, self.lambda);
        let arm = self.arms[exercise].get_or_insert_with(|| LinArmState::new(dim, lambda));
        if arm.staleness == 0 {
            self.dirty.push(exercise);
        }
        arm.update(&x, reward);
        self.steps += 1;
        if self.steps.is_multiple_of(self.refresh_interval) {
            self.refresh_dirty()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.refresh_dirty()
    }

    fn uses_warm_start(&self) -> bool {
        true
    }

    fn snapshot(&self) -> serde_json::Value {
        let digest = |m: &[f64]| {
            let bytes: Vec<u8> = m.iter().flat_map(|x| x.to_le_bytes()).collect();
            hex_digest(&bytes)
        };
        let arms: Vec<serde_json::Value> = self
            .arms
            .iter()
            .enumerate()
            .filter_map(|(a, s)| s.as_ref().map(|s| (a, s)))
            .map(|(a, s)| {
                serde_json::json!({
                    "exercise": a,
                    "omega": s.omega.as_slice(),
                    "a_digest": digest(s.a.as_slice()),
                    "b_digest": digest(s.b.as_slice()),
                    "staleness": s.staleness,
                })
            })
            .collect();
        serde_json::json!({
            "policy": "lints",
            "dim": self.dim,
            "lambda": self.lambda,
            "v": self.v,
            "steps": self.steps,
            "arms": arms,
        })
    }
}
