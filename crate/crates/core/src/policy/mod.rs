//! Recommendation policies.
//!
//! Every policy implements [`Policy`]: `select` picks one exercise out of a
//! candidate set, `update` feeds back the observed skill gain, `flush`
//! applies buffered work. Exercises and users are dense catalog indices.
//! Ties are always broken towards the smallest exercise index.

mod cf;
mod lints;
mod nig;
mod random;
pub mod sampling;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ContextVector;
use crate::seed::hex_digest;

pub use cf::{
    cosine_sim, itemcf_predict, usercf_predict, CfKind, CollaborativeFiltering, DEFAULT_CF_BATCH,
};
pub use lints::{LinArmState, LinearThompson, DEFAULT_REFRESH_INTERVAL};
pub use nig::{NigArmState, NigThompson};
pub use random::UniformRandom;

pub trait Policy: Send {
    fn kind(&self) -> PolicyKind;

    /// Picks a member of `candidates`.
    fn select(
        &mut self,
        user: usize,
        context: Option<&ContextVector>,
        candidates: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<usize>;

    fn update(
        &mut self,
        user: usize,
        context: Option<&ContextVector>,
        exercise: usize,
        reward: f64,
    ) -> Result<()>;

    fn flush(&mut self) -> Result<()>;

    /// Whether the replay should open with uniformly random recommendations.
    fn uses_warm_start(&self) -> bool {
        false
    }

    /// JSON view of the learned state.
    fn snapshot(&self) -> serde_json::Value;

    /// SHA-256 of the canonical snapshot.
    fn state_digest(&self) -> String {
        hex_digest(self.snapshot().to_string().as_bytes())
    }
}

/// Index of the best-scoring candidate; ties go to the smallest exercise
/// index, NaN scores never win.
pub fn argmax_candidate(candidates: &[usize], scores: &[f64]) -> Result<usize> {
    debug_assert_eq!(candidates.len(), scores.len());
    let mut best: Option<(usize, f64)> = None;
    for (&a, &s) in candidates.iter().zip(scores) {
        let s = if s.is_nan() { f64::NEG_INFINITY } else { s };
        best = match best {
            None => Some((a, s)),
            Some((b, bs)) if s > bs || (s == bs && a < b) => Some((a, s)),
            keep => keep,
        };
    }
    best.map(|(a, _)| a).ok_or(Error::EmptyCandidates)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Ts,
    Lints,
    Usercf,
    Itemcf,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Ts,
        PolicyKind::Lints,
        PolicyKind::Usercf,
        PolicyKind::Itemcf,
        PolicyKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Ts => "ts",
            PolicyKind::Lints => "lints",
            PolicyKind::Usercf => "usercf",
            PolicyKind::Itemcf => "itemcf",
            PolicyKind::Random => "random",
        }
    }

    pub fn is_tunable(self) -> bool {
        matches!(self, PolicyKind::Ts | PolicyKind::Lints)
    }

    /// Default parameters: the noninformative TS prior and `v = 0.05`.
    pub fn default_config(self) -> PolicyConfig {
        match self {
            PolicyKind::Ts => PolicyConfig::Ts(TsParams::default()),
            PolicyKind::Lints => PolicyConfig::Lints(LinTsParams::default()),
            PolicyKind::Usercf => PolicyConfig::Usercf(CfParams::default()),
            PolicyKind::Itemcf => PolicyConfig::Itemcf(CfParams::default()),
            PolicyKind::Random => PolicyConfig::Random,
        }
    }

    /// Builds a config from a bare parameter object such as
    /// `{"nu0": 0.01, "alpha0": 1.0}`. Missing fields take defaults.
    pub fn config_from_params(self, params: &serde_json::Value) -> Result<PolicyConfig> {
        let params = if params.is_null() {
            serde_json::Value::Object(Default::default())
        } else {
            params.clone()
        };
        Ok(match self {
            PolicyKind::Ts => PolicyConfig::Ts(serde_json::from_value(params)?),
            PolicyKind::Lints => PolicyConfig::Lints(serde_json::from_value(params)?),
            PolicyKind::Usercf => PolicyConfig::Usercf(serde_json::from_value(params)?),
            PolicyKind::Itemcf => PolicyConfig::Itemcf(serde_json::from_value(params)?),
            PolicyKind::Random => PolicyConfig::Random,
        })
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}`")))
    }
}

/// Normal-Inverse-Gamma prior shared by every arm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsParams {
    #[serde(default)]
    pub m0: f64,
    #[serde(default = "default_nu0", alias = "v0")]
    pub nu0: f64,
    #[serde(default = "default_one")]
    pub alpha0: f64,
    #[serde(default = "default_one")]
    pub beta0: f64,
}

fn default_nu0() -> f64 {
    1.0
}

fn default_one() -> f64 {
    1.0
}

impl Default for TsParams {
    fn default() -> Self {
        TsParams {
            m0: 0.0,
            nu0: 1.0,
            alpha0: 1.0,
            beta0: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinTsParams {
    #[serde(default = "default_v")]
    pub v: f64,
    #[serde(default = "default_one")]
    pub lambda: f64,
    #[serde(default = "default_refresh")]
    pub refresh_interval: usize,
}

fn default_v() -> f64 {
    0.05
}

fn default_refresh() -> usize {
    DEFAULT_REFRESH_INTERVAL
}

impl Default for LinTsParams {
    fn default() -> Self {
        LinTsParams {
            v: default_v(),
            lambda: 1.0,
            refresh_interval: DEFAULT_REFRESH_INTERVAL,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfParams {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    DEFAULT_CF_BATCH
}

impl Default for CfParams {
    fn default() -> Self {
        CfParams {
            batch_size: DEFAULT_CF_BATCH,
        }
    }
}

/// A policy kind together with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "params", rename_all = "lowercase")]
pub enum PolicyConfig {
    Ts(TsParams),
    Lints(LinTsParams),
    Usercf(CfParams),
    Itemcf(CfParams),
    Random,
}

impl PolicyConfig {
    pub fn kind(&self) -> PolicyKind {
        match self {
            PolicyConfig::Ts(_) => PolicyKind::Ts,
            PolicyConfig::Lints(_) => PolicyKind::Lints,
            PolicyConfig::Usercf(_) => PolicyKind::Usercf,
            PolicyConfig::Itemcf(_) => PolicyKind::Itemcf,
            PolicyConfig::Random => PolicyKind::Random,
        }
    }

    /// Parameter object without the kind tag.
    pub fn params_json(&self) -> serde_json::Value {
        match self {
            PolicyConfig::Ts(p) => serde_json::to_value(p),
            PolicyConfig::Lints(p) => serde_json::to_value(p),
            PolicyConfig::Usercf(p) | PolicyConfig::Itemcf(p) => serde_json::to_value(p),
            PolicyConfig::Random => Ok(serde_json::json!({})),
        }
        .expect("parameter structs serialize")
    }

    /// Instantiates a fresh policy for `users` x `exercises` with contexts of
    /// dimension `dim` (ignored by non-contextual policies).
    pub fn build(&self, users: usize, exercises: usize, dim: usize) -> Result<Box<dyn Policy>> {
        Ok(match *self {
            PolicyConfig::Ts(p) => Box::new(NigThompson::new(
                NigArmState::new(p.m0, p.nu0, p.alpha0, p.beta0)?,
                exercises,
            )),
            PolicyConfig::Lints(p) => Box::new(LinearThompson::new(
                dim,
                exercises,
                p.lambda,
                p.v,
                p.refresh_interval,
            )?),
            PolicyConfig::Usercf(p) => Box::new(CollaborativeFiltering::new(
                CfKind::User,
                users,
                exercises,
                p.batch_size,
            )?),
            PolicyConfig::Itemcf(p) => Box::new(CollaborativeFiltering::new(
                CfKind::Item,
                users,
                exercises,
                p.batch_size,
            )?),
            PolicyConfig::Random => Box::new(UniformRandom),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_to_smallest_index() {
        assert_eq!(argmax_candidate(&[5, 2, 9], &[1.0, 1.0, 0.5]).unwrap(), 2);
        assert_eq!(argmax_candidate(&[5, 2, 9], &[1.0, 1.0, 3.0]).unwrap(), 9);
        assert_eq!(argmax_candidate(&[4, 1], &[f64::NAN, -1.0]).unwrap(), 1);
        assert!(matches!(argmax_candidate(&[], &[]), Err(Error::EmptyCandidates)));
    }

    #[test]
    fn params_parse_with_defaults_and_aliases() {
        let c = PolicyKind::Ts
            .config_from_params(&serde_json::json!({"m0": 0.0, "v0": 0.01, "alpha0": 1.0, "beta0": 2.0}))
            .unwrap();
        assert_eq!(
            c,
            PolicyConfig::Ts(TsParams {
                m0: 0.0,
                nu0: 0.01,
                alpha0: 1.0,
                beta0: 2.0
            })
        );
        let l = PolicyKind::Lints
            .config_from_params(&serde_json::json!({"v": 0.05}))
            .unwrap();
        assert_eq!(l, PolicyConfig::Lints(LinTsParams::default()));
        assert!(PolicyKind::Lints
            .config_from_params(&serde_json::json!({"w": 1}))
            .is_err());
        assert_eq!("LinTS".parse::<PolicyKind>().unwrap(), PolicyKind::Lints);
    }

    #[test]
    fn config_json_round_trip() {
        let c = PolicyConfig::Lints(LinTsParams {
            v: 0.25,
            lambda: 1.0,
            refresh_interval: 10,
        });
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<PolicyConfig>(&s).unwrap(), c);
    }
}
