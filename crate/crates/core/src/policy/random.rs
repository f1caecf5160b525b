use rand::{Rng, RngCore};

use super::{Policy, PolicyKind};
use crate::error::{Error, Result};
use crate::model::ContextVector;

/// Uniformly random choice among the candidates; learns nothing.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformRandom;

impl Policy for UniformRandom {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Random
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
        Ok(candidates[rng.random_range(0..candidates.len())])
    }

    fn update(
        &mut self,
        _user: usize,
        _context: Option<&ContextVector>,
        _exercise: usize,
        _reward: f64,
    ) -> Result<()> {
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        Ok(())
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::json!({"policy": "random"})
    }
}
