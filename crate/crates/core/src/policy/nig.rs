use rand::RngCore;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::sampling::{standard_normal, InverseGamma};
use super::{argmax_candidate, Policy, PolicyKind};
use crate::error::{Error, Result};
use crate::model::ContextVector;

/// Normal-Inverse-Gamma belief over one exercise's reward mean and variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NigArmState {
    pub m: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NigArmState {
    pub fn new(m: f64, nu: f64, alpha: f64, beta: f64) -> Result<Self> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !m.is_finite() || !positive(nu) || !positive(alpha) || !positive(beta) {
            return Err(Error::Config(format!(
                "NIG prior needs finite m and positive nu, alpha, beta; got ({m}, {nu}, {alpha}, {beta})"
            )));
        }
        Ok(NigArmState { m, nu, alpha, beta })
    }

    /// Conjugate update with one observed reward.
    pub fn updated(self, reward: f64) -> Self {
        let NigArmState { m, nu, alpha, beta } = self;
        NigArmState {
            m: (nu * m + reward) / (nu + 1.0),
            nu: nu + 1.0,
            alpha: alpha + 0.5,
            beta: beta + nu * (reward - m).powi(2) / (2.0 * (nu + 1.0)),
        }
    }

    /// Draws `sigma2 ~ InvGamma(alpha, beta)` then `mu ~ N(m, sigma2 / nu)`
    /// and returns `mu`.
    pub fn sample_mean(&self, rng: &mut dyn RngCore) -> f64 {
        let ig = InverseGamma::new(self.alpha, self.beta).expect("arm invariants hold");
        let sigma2 = ig.sample(rng);
        let z = standard_normal(rng);
        self.m + (sigma2 / self.nu).sqrt() * z
    }
}

/// Thompson sampling with an independent NIG posterior per exercise.
#[derive(Clone, Debug)]
pub struct NigThompson {
    prior: NigArmState,
    arms: Vec<NigArmState>,
}

impl NigThompson {
    pub fn new(prior: NigArmState, exercises: usize) -> Self {
        NigThompson {
            prior,
            arms: vec![prior; exercises],
        }
    }

    pub fn arm(&self, exercise: usize) -> NigArmState {
        self.arms.get(exercise).copied().unwrap_or(self.prior)
    }

    fn arm_mut(&mut self, exercise: usize) -> &mut NigArmState {
        if exercise >= self.arms.len() {
            self.arms.resize(exercise + 1, self.prior);
        }
        &mut self.arms[exercise]
    }
}

impl Policy for NigThompson {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Ts
    }

    fn select(
        &mut self,
        _user: usize,
        _context: Option<&ContextVector>,
        candidates: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<usize> {
        if candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let scores: Vec<f64> = candidates
            .iter()
            .map(|&a| self.arm(a).sample_mean(rng))
            .collect();
        argmax_candidate(candidates, &scores)
    }

    fn update(
        &mut self,
        _user: usize,
        _context: Option<&ContextVector>,
        exercise: usize,
        reward: f64,
    ) -> Result<()> {
        let arm = self.arm_mut(exercise);
        *arm = arm.updated(reward);
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        Ok(())
    }

    fn uses_warm_start(&self) -> bool {
        true
    }

    fn snapshot(&self) -> serde_json::Value {
        let arms: Vec<serde_json::Value> = self
            .arms
            .iter()
            .enumerate()
            .filter(|(_, s)| **s != self.prior)
            .map(|(a, s)| serde_json::json!({"exercise": a, "m": s.m, "nu": s.nu, "alpha": s.alpha, "beta": s.beta}))
            .collect();
        serde_json::json!({"policy": "ts", "prior": self.prior, "arms": arms})
    }
}
