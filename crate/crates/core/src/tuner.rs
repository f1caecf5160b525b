//! Grid search on the validation split and the final retrain-and-test run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{try_par_map, Execution};
use crate::policy::{LinTsParams, PolicyConfig, PolicyKind, TsParams};
use crate::replay::{
    ReplayData, ReplayMode, ReplaySession, ReplayTrace, Stage, DEFAULT_EVAL_HORIZON,
    DEFAULT_WARM_START_ROUNDS,
};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsGrid {
    pub m0: Vec<f64>,
    pub nu0: Vec<f64>,
    pub alpha0: Vec<f64>,
    pub beta0: Vec<f64>,
}

impl Default for TsGrid {
    fn default() -> Self {
        TsGrid {
            m0: vec![0.0],
            nu0: vec![0.01, 0.1, 0.5, 1.0, 5.0],
            alpha0: vec![0.1, 1.0, 2.0],
            beta0: vec![0.1, 1.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinTsGrid {
    pub v: Vec<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: Vec<f64>,
}

fn default_lambda() -> Vec<f64> {
    vec![1.0]
}

impl Default for LinTsGrid {
    fn default() -> Self {
        LinTsGrid {
            v: vec![0.001, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0],
            lambda: default_lambda(),
        }
    }
}

/// Candidate values per tunable policy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub ts: TsGrid,
    #[serde(default)]
    pub lints: LinTsGrid,
}

impl GridSpec {
    /// Cartesian product in enumeration order (last parameter fastest).
    pub fn configs(&self, kind: PolicyKind) -> Result<Vec<PolicyConfig>> {
        let configs: Vec<PolicyConfig> = match kind {
            PolicyKind::Ts => {
                let g = &self.ts;
                let mut out = Vec::new();
                for &m0 in &g.m0 {
                    for &nu0 in &g.nu0 {
                        for &alpha0 in &g.alpha0 {
                            for &beta0 in &g.beta0 {
                                out.push(PolicyConfig::Ts(TsParams {
                                    m0,
                                    nu0,
                                    alpha0,
                                    beta0,
                                }));
                            }
                        }
                    }
                }
                out
            }
            PolicyKind::Lints => {
                let g = &self.lints;
                let mut out = Vec::new();
                for &lambda in &g.lambda {
                    for &v in &g.v {
                        out.push(PolicyConfig::Lints(LinTsParams {
                            v,
                            lambda,
                            ..LinTsParams::default()
                        }));
                    }
                }
                out
            }
            other => {
                return Err(Error::Config(format!("{other} has no hyperparameters to tune")));
            }
        };
        if configs.is_empty() {
            return Err(Error::Config(format!("empty {kind} grid")));
        }
        Ok(configs)
    }
}

/// Replay settings shared by tuning and final evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub warm_start_rounds: usize,
    /// Fraction of each learner's events evaluated in validation and test.
    pub horizon: f64,
    /// No policy updates during the test replay.
    pub freeze: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            warm_start_rounds: DEFAULT_WARM_START_ROUNDS,
            horizon: DEFAULT_EVAL_HORIZON,
            freeze: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigScore {
    pub config: PolicyConfig,
    /// Mean validation reward averaged over seeds.
    pub mean_reward: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub policy: PolicyKind,
    pub seeds: Vec<u64>,
    pub scores: Vec<ConfigScore>,
    pub winner: PolicyConfig,
    pub winner_index: usize,
}

/// Replay seed of a policy for one root seed and purpose.
pub fn replay_seed(root: u64, purpose: &str, kind: PolicyKind) -> u64 {
    derive_seed(root, &format!("{purpose}/{kind}"))
}

/// Mean validation reward of one configuration for one seed: pretrain on
/// train, then replay validation with updates on.
pub fn validation_score(
    config: &PolicyConfig,
    data: &ReplayData,
    seed: u64,
    settings: &EvalSettings,
) -> Result<f64> {
    let mut policy = config.build(data.users(), data.exercises(), data.context_dim())?;
    let mut session = ReplaySession::new(replay_seed(seed, "tune", config.kind()), settings.warm_start_rounds);
    session.pretrain(data, policy.as_mut(), &[Stage::Train])?;
    let trace = session.run(
        data,
        policy.as_mut(),
        Stage::Validation,
        ReplayMode::evaluation(true, settings.horizon),
    )?;
    Ok(trace.mean_reward())
}

/// Scores every configuration of `kind`'s grid over `seeds`; the winner has
/// the highest mean, ties going to the earliest configuration.
pub fn grid_search(
    kind: PolicyKind,
    grid: &GridSpec,
    data: &ReplayData,
    seeds: &[u64],
    settings: &EvalSettings,
    exec: Execution,
) -> Result<TuneResult> {
    if seeds.is_empty() {
        return Err(Error::Config("tuning needs at least one seed".into()));
    }
    let configs = grid.configs(kind)?;
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let rewards = try_par_map(exec, jobs, |(c, s)| validation_score(&configs[c], data, s, settings))?;
    let scores: Vec<ConfigScore> = configs
        .iter()
        .zip(rewards.chunks(seeds.len()))
        .map(|(config, per_seed)| ConfigScore {
            config: *config,
            mean_reward: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
            per_seed: per_seed.to_vec(),
        })
        .collect();
    let mut winner_index = 0;
    for (k, s) in scores.iter().enumerate() {
        if s.mean_reward > scores[winner_index].mean_reward {
            winner_index = k;
        }
    }
    Ok(TuneResult {
        policy: kind,
        seeds: seeds.to_vec(),
        winner: scores[winner_index].config,
        winner_index,
        scores,
    })
}

#[derive(Clone, Debug)]
pub struct FinalRun {
    pub config: PolicyConfig,
    pub trace: ReplayTrace,
    /// Policy state digest after pretraining and after the test replay.
    pub digest_before_test: String,
    pub digest_after_test: String,
}

/// Fresh policy, pretrained on train then validation, replayed once on
/// test.
pub fn final_run(
    config: &PolicyConfig,
    data: &ReplayData,
    seed: u64,
    settings: &EvalSettings,
) -> Result<FinalRun> {
    let mut policy = config.build(data.users(), data.exercises(), data.context_dim())?;
    let mut session = ReplaySession::new(replay_seed(seed, "final", config.kind()), settings.warm_start_rounds);
    session.pretrain(data, policy.as_mut(), &[Stage::Train, Stage::Validation])?;
    let digest_before_test = policy.state_digest();
    let trace = session.run(
        data,
        policy.as_mut(),
        Stage::Test,
        ReplayMode::evaluation(!settings.freeze, settings.horizon),
    )?;
    let digest_after_test = policy.state_digest();
    if settings.freeze && digest_before_test != digest_after_test {
        return Err(Error::Invariant(format!(
            "{} state changed during a frozen test replay",
            config.kind()
        )));
    }
    Ok(FinalRun {
        config: *config,
        trace,
        digest_before_test,
        digest_after_test,
    })
}
