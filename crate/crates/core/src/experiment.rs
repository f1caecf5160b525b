//! End-to-end experiments: simulate or ingest, preprocess, tune, evaluate
//! and report, all seeded from one root seed.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! synthetic/        generated raw data (synthetic source only)
//! data/             train/validation/test CSVs, encoder, profiles, report
//! tune/<policy>.json
//! evaluate/<policy>/{trace.csv, action_freq.json, windows.json, summary.json}
//! report/{comparison.csv, frequency.json}
//! summary.json
//! manifest.json
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assistments::{self, AssistmentsColumns};
use crate::context::fit_context_encoder;
use crate::error::{Error, Result};
use crate::exec::{try_par_map, Execution};
use crate::io::{create_dir, read_json, read_profiles, read_raw_records, write_interactions, write_json, write_profiles};
use crate::model::LearnerProfile;
use crate::policy::{PolicyConfig, PolicyKind};
use crate::preprocess::{run_pipeline, PreprocessConfig, PreprocessReport};
use crate::replay::{
    emit_metrics, read_trace_cum_avg, ReplayData, ACTION_FREQ_FILE, DEFAULT_EVAL_HORIZON,
    DEFAULT_WARM_START_ROUNDS, DEFAULT_WINDOW, ENCODER_FILE, PROFILES_FILE, TEST_FILE, TRACE_FILE,
    TRAIN_FILE, VALIDATION_FILE,
};
use crate::seed::{derive_seed, hex_digest};
use crate::synthetic::{self, SyntheticSpec};
use crate::tuner::{final_run, grid_search, EvalSettings, GridSpec, TuneResult};

pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const FREQUENCY_FILE: &str = "frequency.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    /// `user_id,exercise_id,skill_id,timestamp,correct,mastery_before,mastery_after`.
    #[default]
    Canonical,
    /// The ASSISTments 2017 export, profiles taken from the same file.
    Assistments,
}

impl std::str::FromStr for SourceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "canonical" => Ok(SourceFormat::Canonical),
            "assistments" => Ok(SourceFormat::Assistments),
            _ => Err(Error::Config(format!("unknown source format `{s}`"))),
        }
    }
}

/// Where the interactions come from. Exactly one of `synthetic`,
/// `interactions` and `data_dir` must be set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Generate a synthetic dataset with this spec.
    pub synthetic: Option<SyntheticSpec>,
    /// Raw interaction file.
    pub interactions: Option<PathBuf>,
    /// Profile CSV for canonical sources.
    pub profiles: Option<PathBuf>,
    pub format: SourceFormat,
    pub columns: Option<AssistmentsColumns>,
    /// Already preprocessed directory; preprocessing is skipped.
    pub data_dir: Option<PathBuf>,
}

fn default_policies() -> Vec<PolicyKind> {
    PolicyKind::ALL.to_vec()
}
fn default_tune_seeds() -> usize {
    3
}
fn default_true() -> bool {
    true
}
fn default_warm_start() -> usize {
    DEFAULT_WARM_START_ROUNDS
}
fn default_horizon() -> f64 {
    DEFAULT_EVAL_HORIZON
}
fn default_window() -> usize {
    DEFAULT_WINDOW
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyKind>,
    /// Fixed parameters per policy name; a tunable policy listed here is
    /// not tuned.
    #[serde(default)]
    pub params: BTreeMap<PolicyKind, serde_json::Value>,
    /// Tune TS and LinTS when no fixed parameters are given; otherwise
    /// defaults are used.
    #[serde(default = "default_true")]
    pub tune: bool,
    #[serde(default)]
    pub grid: GridSpec,
    /// Number of seeds each grid configuration is averaged over.
    #[serde(default = "default_tune_seeds")]
    pub tune_seeds: usize,
    /// Root seed; every stage seed derives from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_warm_start")]
    pub warm_start_rounds: usize,
    /// Fraction of each learner's validation/test events that are rounds.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_true")]
    pub freeze: bool,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

impl ExperimentConfig {
    pub fn new(output_dir: impl Into<PathBuf>, data: DataConfig) -> Self {
        ExperimentConfig {
            output_dir: output_dir.into(),
            data,
            preprocess: PreprocessConfig::default(),
            policies: default_policies(),
            params: BTreeMap::new(),
            tune: true,
            grid: GridSpec::default(),
            tune_seeds: default_tune_seeds(),
            seed: 0,
            warm_start_rounds: default_warm_start(),
            horizon: default_horizon(),
            freeze: true,
            window: default_window(),
            parallel: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let sources = [d.synthetic.is_some(), d.interactions.is_some(), d.data_dir.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(Error::Config(
                "exactly one of data.synthetic, data.interactions, data.data_dir is required".into(),
            ));
        }
        for path in [&d.interactions, &d.profiles, &d.data_dir].into_iter().flatten() {
            if !path.exists() {
                return Err(Error::MissingFile(path.clone()));
            }
        }
        let [a, b, c] = self.preprocess.fractions.as_array();
        crate::preprocess::Fractions::new(a, b, c)?;
        if self.policies.is_empty() {
            return Err(Error::Config("no policies selected".into()));
        }
        if self.tune && self.tune_seeds == 0 {
            return Err(Error::Config("tune_seeds must be at least 1".into()));
        }
        if !(self.horizon > 0.0 && self.horizon <= 1.0) {
            return Err(Error::Config(format!("horizon must lie in (0, 1], got {}", self.horizon)));
        }
        Ok(())
    }

    pub fn settings(&self) -> EvalSettings {
        EvalSettings {
            warm_start_rounds: self.warm_start_rounds,
            horizon: self.horizon,
            freeze: self.freeze,
        }
    }

    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::default()
        } else {
            Execution::Sequential
        }
    }

    pub fn tune_seed_list(&self) -> Vec<u64> {
        (0..self.tune_seeds)
            .map(|k| derive_seed(self.seed, &format!("tune/{k}")))
            .collect()
    }

    pub fn evaluate_seed(&self) -> u64 {
        derive_seed(self.seed, "evaluate")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex_digest(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Reads raw interactions (and profiles) in `format`, runs the pipeline,
/// fits the context encoder and writes the preprocessed directory.
pub fn preprocess_to_dir(
    interactions: &Path,
    profiles: Option<&Path>,
    format: SourceFormat,
    columns: Option<&AssistmentsColumns>,
    config: &PreprocessConfig,
    out_dir: &Path,
    exec: Execution,
) -> Result<PreprocessReport> {
    let (raw, profiles): (_, Option<Vec<LearnerProfile>>) = match format {
        SourceFormat::Canonical => (
            read_raw_records(interactions)?,
            profiles.map(read_profiles).transpose()?,
        ),
        SourceFormat::Assistments => {
            let default_columns = AssistmentsColumns::default();
            let c = assistments::convert(interactions, columns.unwrap_or(&default_columns))?;
            let profiles = match profiles {
                Some(p) => read_profiles(p)?,
                None => c.profiles,
            };
            (c.records, Some(profiles))
        }
    };
    let (split, report) = run_pipeline(&raw, config, exec);
    create_dir(out_dir)?;
    write_interactions(&out_dir.join(TRAIN_FILE), &split.train)?;
    write_interactions(&out_dir.join(VALIDATION_FILE), &split.validation)?;
    write_interactions(&out_dir.join(TEST_FILE), &split.test)?;
    if let Some(profiles) = profiles {
        let encoder = fit_context_encoder(&profiles, &split.train)?;
        write_json(&out_dir.join(ENCODER_FILE), &encoder)?;
        write_profiles(&out_dir.join(PROFILES_FILE), &profiles)?;
    }
    write_json(&out_dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Per-policy result of a final test replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub policy: PolicyKind,
    pub config: PolicyConfig,
    pub data_fingerprint: String,
    pub seed: u64,
    pub final_reward: f64,
    pub rounds: usize,
    pub skipped_rounds: usize,
    pub warm_start_rounds: usize,
    pub freeze: bool,
    pub horizon: f64,
    pub state_digest_before_test: String,
    pub state_digest_after_test: String,
}

/// Final run of one configuration with its metric files written to
/// `out_dir`.
pub fn evaluate_policy(
    config: &PolicyConfig,
    data: &ReplayData,
    seed: u64,
    settings: &EvalSettings,
    window: usize,
    out_dir: &Path,
) -> Result<EvalSummary> {
    let run = final_run(config, data, seed, settings)?;
    emit_metrics(&run.trace, &data.catalog, out_dir, window)?;
    let summary = EvalSummary {
        policy: config.kind(),
        config: *config,
        data_fingerprint: data.fingerprint().to_string(),
        seed,
        final_reward: run.trace.mean_reward(),
        rounds: run.trace.rounds(),
        skipped_rounds: run.trace.skipped,
        warm_start_rounds: run.trace.warm_start,
        freeze: settings.freeze,
        horizon: settings.horizon,
        state_digest_before_test: run.digest_before_test,
        state_digest_after_test: run.digest_after_test,
    };
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// `100 * (a - b) / b`; `None` when `b` is zero.
pub fn improvement(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| 100.0 * (a - b) / b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: PolicyKind,
    pub config: PolicyConfig,
    pub tuned: bool,
    pub final_reward: f64,
    pub rounds: usize,
    pub skipped_rounds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub data_fingerprint: String,
    pub seed: u64,
    pub policies: Vec<PolicyResult>,
    /// `"<a>_vs_<b>"` to `100 * (r_a - r_b) / r_b`.
    pub improvements: BTreeMap<String, Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub root_seed: u64,
    pub tune_seeds: Vec<u64>,
    pub evaluate_seed: u64,
    pub data_fingerprint: String,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Runs every configured stage in order. A failure aborts with the stage
/// name; files written by earlier stages are kept.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    stage("config", config.validate())?;
    let exec = config.execution();
    let out = &config.output_dir;
    stage("config", create_dir(out))?;

    let data_dir = match (&config.data.synthetic, &config.data.interactions, &config.data.data_dir) {
        (_, _, Some(dir)) => dir.clone(),
        (Some(spec), _, _) => {
            let raw_dir = out.join("synthetic");
            stage("simulate", (|| {
                let data = synthetic::generate(spec, exec)?;
                synthetic::write_dataset(&data, spec, &raw_dir)
            })())?;
            let dir = out.join("data");
            stage(
                "preprocess",
                preprocess_to_dir(
                    &raw_dir.join(synthetic::INTERACTIONS_FILE),
                    Some(&raw_dir.join(synthetic::PROFILES_FILE)),
                    SourceFormat::Canonical,
                    None,
                    &config.preprocess,
                    &dir,
                    exec,
                ),
            )?;
            dir
        }
        (None, Some(interactions), None) => {
            let dir = out.join("data");
            stage(
                "preprocess",
                preprocess_to_dir(
                    interactions,
                    config.data.profiles.as_deref(),
                    config.data.format,
                    config.data.columns.as_ref(),
                    &config.preprocess,
                    &dir,
                    exec,
                ),
            )?;
            dir
        }
        (None, None, None) => unreachable!("validated"),
    };
    let data = stage("load", ReplayData::load(&data_dir))?;
    let settings = config.settings();

    let tune_seeds = config.tune_seed_list();
    let mut chosen: Vec<(PolicyConfig, bool)> = Vec::with_capacity(config.policies.len());
    for &kind in &config.policies {
        if let Some(params) = config.params.get(&kind) {
            chosen.push((stage("config", kind.config_from_params(params))?, false));
        } else if kind.is_tunable() && config.tune {
            let result: TuneResult = stage(
                "tune",
                grid_search(kind, &config.grid, &data, &tune_seeds, &settings, exec),
            )?;
            let tune_dir = out.join("tune");
            stage("tune", create_dir(&tune_dir))?;
            stage("tune", write_json(&tune_dir.join(format!("{kind}.json")), &result))?;
            chosen.push((result.winner, true));
        } else {
            chosen.push((kind.default_config(), false));
        }
    }

    let eval_seed = config.evaluate_seed();
    let eval_root = out.join("evaluate");
    let summaries = stage(
        "evaluate",
        try_par_map(exec, chosen.clone(), |(policy_config, _)| {
            evaluate_policy(
                &policy_config,
                &data,
                eval_seed,
                &settings,
                config.window,
                &eval_root.join(policy_config.kind().name()),
            )
        }),
    )?;

    let dirs: Vec<(String, PathBuf)> = config
        .policies
        .iter()
        .map(|k| (k.name().to_string(), eval_root.join(k.name())))
        .collect();
    stage("report", report(&dirs, &out.join("report")))?;

    let policies: Vec<PolicyResult> = summaries
        .iter()
        .zip(&chosen)
        .map(|(s, (_, tuned))| PolicyResult {
            policy: s.policy,
            config: s.config,
            tuned: *tuned,
            final_reward: s.final_reward,
            rounds: s.rounds,
            skipped_rounds: s.skipped_rounds,
        })
        .collect();
    let mut improvements = BTreeMap::new();
    for a in &policies {
        for b in &policies {
            if a.policy != b.policy {
                improvements.insert(
                    format!("{}_vs_{}", a.policy, b.policy),
                    improvement(a.final_reward, b.final_reward),
                );
            }
        }
    }
    let summary = ExperimentSummary {
        data_fingerprint: data.fingerprint().to_string(),
        seed: config.seed,
        policies,
        improvements,
    };
    stage("report", write_json(&out.join(SUMMARY_FILE), &summary))?;
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        config: config.clone(),
        root_seed: config.seed,
        tune_seeds,
        evaluate_seed: eval_seed,
        data_fingerprint: data.fingerprint().to_string(),
    };
    stage("report", write_json(&out.join(MANIFEST_FILE), &manifest))?;
    Ok(summary)
}

/// Merges per-policy evaluation directories into `comparison.csv` (round
/// by policy cumulative averages; shorter traces leave empty cells) and
/// `frequency.json` (policy to exercise counts). All inputs must come from
/// the same data.
pub fn report(evaluations: &[(String, PathBuf)], out_dir: &Path) -> Result<()> {
    if evaluations.is_empty() {
        return Err(Error::Config("report needs at least one evaluation".into()));
    }
    let mut fingerprint: Option<(String, String)> = None;
    let mut curves = Vec::with_capacity(evaluations.len());
    let mut frequencies: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (name, dir) in evaluations {
        let summary: EvalSummary = read_json(&dir.join(SUMMARY_FILE))?;
        match &fingerprint {
            None => fingerprint = Some((name.clone(), summary.data_fingerprint.clone())),
            Some((first, fp)) if *fp != summary.data_fingerprint => {
                return Err(Error::Config(format!(
                    "evaluations `{first}` and `{name}` come from different data"
                )));
            }
            Some(_) => {}
        }
        curves.push(read_trace_cum_avg(&dir.join(TRACE_FILE))?);
        frequencies.insert(name.clone(), read_json(&dir.join(ACTION_FREQ_FILE))?);
    }

    create_dir(out_dir)?;
    let path = out_dir.join(COMPARISON_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let rows = curves.iter().map(Vec::len).max().unwrap_or(0);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        let names: Vec<&str> = evaluations.iter().map(|(n, _)| n.as_str()).collect();
        writeln!(w, "round,{}", names.join(","))?;
        for t in 0..rows {
            write!(w, "{}", t + 1)?;
            for c in &curves {
                match c.get(t) {
                    Some(v) => write!(w, ",{v}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(&path, e))?;
    write_json(&out_dir.join(FREQUENCY_FILE), &frequencies)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_examples() {
        assert!((improvement(0.198, 0.172).unwrap() - 15.116).abs() < 0.01);
        assert!((improvement(0.198, 0.164).unwrap() - 20.73).abs() < 0.01);
        assert_eq!(improvement(0.2, 0.2), Some(0.0));
        assert_eq!(improvement(0.2, 0.0), None);
    }

    #[test]
    fn config_requires_one_source() {
        let c = ExperimentConfig::new("out", DataConfig::default());
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ExperimentConfig::new(
            "out",
            DataConfig {
                synthetic: Some(SyntheticSpec::default()),
                ..Default::default()
            },
        );
        c.validate().unwrap();
    }

    #[test]
    fn config_json_defaults() {
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"output_dir": "o", "data": {"synthetic": {"users": 5}}, "params": {"lints": {"v": 0.05}}}"#,
        )
        .unwrap();
        assert_eq!(c.policies.len(), 5);
        assert!(c.freeze && c.tune);
        assert_eq!(c.tune_seed_list().len(), 3);
        assert_eq!(c.params[&PolicyKind::Lints]["v"], 0.05);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"output_dir": "o", "sed": 1}"#).is_err());
    }

    #[test]
    fn missing_trace_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = report(&[("ts".into(), dir.path().join("nope"))], &dir.path().join("r")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)), "{err}");
    }
}
