//! Preprocessing: reward computation and filtering, de-duplication, learner
//! activity threshold, per-learner temporal split and warm-start enforcement.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{par_map, Execution};
use crate::io::{parse_bool, parse_timestamp, RawRecord};
use crate::model::{Interaction, SplitDataset};

pub const DEFAULT_MIN_INTERACTIONS: usize = 50;
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

const MAX_RECORDED_ERRORS: usize = 100;

/// Why a raw record did not become an [`Interaction`].
#[derive(Clone, Debug, PartialEq)]
pub enum RecordIssue {
    MissingMastery,
    Malformed(String),
}

impl fmt::Display for RecordIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordIssue::MissingMastery => write!(f, "missing mastery estimate"),
            RecordIssue::Malformed(msg) => write!(f, "{msg}"),
        }
    }
}

fn parse_mastery(name: &str, text: &str) -> std::result::Result<f64, RecordIssue> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| RecordIssue::Malformed(format!("{name} `{text}` is not a number")))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(RecordIssue::Malformed(format!("{name} {v} outside [0, 1]")));
    }
    Ok(v)
}

/// Parses one raw row; `reward = mastery_after - mastery_before`.
pub fn parse_record(raw: &RawRecord) -> std::result::Result<Interaction, RecordIssue> {
    if raw.mastery_before.trim().is_empty() || raw.mastery_after.trim().is_empty() {
        return Err(RecordIssue::MissingMastery);
    }
    for (name, v) in [
        ("user_id", &raw.user_id),
        ("exercise_id", &raw.exercise_id),
        ("skill_id", &raw.skill_id),
    ] {
        if v.trim().is_empty() {
            return Err(RecordIssue::Malformed(format!("empty {name}")));
        }
    }
    let timestamp = parse_timestamp(&raw.timestamp)
        .ok_or_else(|| RecordIssue::Malformed(format!("bad timestamp `{}`", raw.timestamp)))?;
    let correct = parse_bool(&raw.correct)
        .ok_or_else(|| RecordIssue::Malformed(format!("bad correct flag `{}`", raw.correct)))?;
    let mastery_before = parse_mastery("mastery_before", &raw.mastery_before)?;
    let mastery_after = parse_mastery("mastery_after", &raw.mastery_after)?;
    Ok(Interaction {
        user_id: raw.user_id.clone(),
        exercise_id: raw.exercise_id.clone(),
        skill_id: raw.skill_id.clone(),
        timestamp,
        row: raw.row,
        correct,
        mastery_before,
        mastery_after,
        reward: mastery_after - mastery_before,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub input: usize,
    pub dropped: usize,
    pub retained: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub users: usize,
    pub exercises: usize,
    pub interactions: usize,
    pub skills: usize,
}

impl DatasetCounts {
    pub fn of<'a>(records: impl IntoIterator<Item = &'a Interaction>) -> Self {
        let mut users = HashSet::new();
        let mut exercises = HashSet::new();
        let mut skills = HashSet::new();
        let mut interactions = 0;
        for i in records {
            users.insert(i.user_id.as_str());
            exercises.insert(i.exercise_id.as_str());
            skills.insert(i.skill_id.as_str());
            interactions += 1;
        }
        DatasetCounts {
            users: users.len(),
            exercises: exercises.len(),
            interactions,
            skills: skills.len(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Per-stage record accounting for one preprocessing run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub input_records: usize,
    pub malformed: usize,
    pub missing_mastery: usize,
    pub non_positive_reward: usize,
    pub duplicates: usize,
    pub low_activity_interactions: usize,
    pub low_activity_users: usize,
    pub warm_start_validation: usize,
    pub warm_start_test: usize,
    /// First record-level errors, `row N: message`.
    pub record_errors: Vec<String>,
    pub stages: Vec<StageSummary>,
    pub split: SplitCounts,
    pub final_counts: DatasetCounts,
}

impl PreprocessReport {
    fn stage(&mut self, stage: &str, input: usize, retained: usize) {
        self.stages.push(StageSummary {
            stage: stage.to_string(),
            input,
            dropped: input - retained,
            retained,
        });
    }
}

/// Stage 1: parse rows, drop missing/malformed mastery and non-positive
/// rewards. Malformed rows are recorded in the report, never fatal.
pub fn compute_rewards(raw: &[RawRecord], report: &mut PreprocessReport) -> Vec<Interaction> {
    let mut out = Vec::with_capacity(raw.len());
    report.input_records += raw.len();
    for r in raw {
        match parse_record(r) {
            Ok(i) if i.reward > 0.0 => out.push(i),
            Ok(_) => report.non_positive_reward += 1,
            Err(RecordIssue::MissingMastery) => report.missing_mastery += 1,
            Err(RecordIssue::Malformed(msg)) => {
                report.malformed += 1;
                if report.record_errors.len() < MAX_RECORDED_ERRORS {
                    report.record_errors.push(format!("row {}: {msg}", r.row));
                }
            }
        }
    }
    report.stage("reward", raw.len(), out.len());
    out
}

/// Stage 2: keeps the latest attempt, by `(timestamp, row)`, of every
/// (user, exercise) pair. Retained records keep their input order.
pub fn dedup_latest(interactions: Vec<Interaction>) -> Vec<Interaction> {
    let mut latest: HashMap<(&str, &str), usize> = HashMap::with_capacity(interactions.len());
    for (idx, i) in interactions.iter().enumerate() {
        latest
            .entry((i.user_id.as_str(), i.exercise_id.as_str()))
            .and_modify(|best| {
                if i.order_key() > interactions[*best].order_key() {
                    *best = idx;
                }
            })
            .or_insert(idx);
    }
    let mut keep = vec![false; interactions.len()];
    for idx in latest.into_values() {
        keep[idx] = true;
    }
    interactions
        .into_iter()
        .zip(keep)
        .filter_map(|(i, k)| k.then_some(i))
        .collect()
}

/// Stage 3: drops every interaction of users with fewer than `threshold`.
pub fn filter_low_activity(interactions: Vec<Interaction>, threshold: usize) -> Vec<Interaction> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for i in &interactions {
        *counts.entry(i.user_id.as_str()).or_default() += 1;
    }
    let active: HashSet<String> = counts
        .into_iter()
        .filter(|&(_, n)| n >= threshold)
        .map(|(u, _)| u.to_string())
        .collect();
    interactions
        .into_iter()
        .filter(|i| active.contains(&i.user_id))
        .collect()
}

/// Train/validation/test fractions, validated to sum to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fractions([f64; 3]);

impl Fractions {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let f = [train, validation, test];
        if f.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config(format!("split fractions must be non-negative, got {f:?}")));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1, got {sum}")));
        }
        Ok(Fractions(f))
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    /// `(train, validation, test)` sizes for `n` records:
    /// `floor(f_train * n)`, `floor(f_val * n)`, remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let nf = n as f64;
        let train = ((self.0[0] * nf + 1e-9).floor() as usize).min(n);
        let val = ((self.0[1] * nf + 1e-9).floor() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

impl Default for Fractions {
    fn default() -> Self {
        Fractions(DEFAULT_FRACTIONS)
    }
}

impl std::str::FromStr for Fractions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad fractions `{s}`")))?;
        match parts.as_slice() {
            [a, b, c] => Fractions::new(*a, *b, *c),
            _ => Err(Error::Config(format!("expected three fractions, got `{s}`"))),
        }
    }
}

fn sort_chronologically(v: &mut [Interaction]) {
    v.sort_by_key(Interaction::order_key);
}

/// Per-learner chronological split. Each output split is in global
/// chronological order.
pub fn temporal_split(
    interactions: Vec<Interaction>,
    fractions: Fractions,
    exec: Execution,
) -> SplitDataset {
    let mut by_user: HashMap<String, Vec<Interaction>> = HashMap::new();
    for i in interactions {
        by_user.entry(i.user_id.clone()).or_default().push(i);
    }
    let mut groups: Vec<(String, Vec<Interaction>)> = by_user.into_iter().collect();
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    let parts = par_map(exec, groups, |(_, mut records)| {
        sort_chronologically(&mut records);
        let (n_train, n_val, _) = fractions.sizes(records.len());
        let test = records.split_off(n_train + n_val);
        let validation = records.split_off(n_train);
        (records, validation, test)
    });
    let mut split = SplitDataset::default();
    for (train, validation, test) in parts {
        split.train.extend(train);
        split.validation.extend(validation);
        split.test.extend(test);
    }
    sort_chronologically(&mut split.train);
    sort_chronologically(&mut split.validation);
    sort_chronologically(&mut split.test);
    split
}

/// Stage 4: removes validation/test records whose user or exercise is absent
/// from train. Returns the split and the (validation, test) removal counts.
pub fn enforce_warm_start(split: SplitDataset) -> (SplitDataset, usize, usize) {
    let users: HashSet<String> = split.train.iter().map(|i| i.user_id.clone()).collect();
    let exercises: HashSet<String> = split.train.iter().map(|i| i.exercise_id.clone()).collect();
    let warm = |i: &Interaction| users.contains(&i.user_id) && exercises.contains(&i.exercise_id);
    let SplitDataset {
        train,
        validation,
        test,
    } = split;
    let (nv, nt) = (validation.len(), test.len());
    let validation: Vec<Interaction> = validation.into_iter().filter(|i| warm(i)).collect();
    let test: Vec<Interaction> = test.into_iter().filter(|i| warm(i)).collect();
    let removed = (nv - validation.len(), nt - test.len());
    (
        SplitDataset {
            train,
            validation,
            test,
        },
        removed.0,
        removed.1,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub min_interactions: usize,
    pub fractions: Fractions,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_interactions: DEFAULT_MIN_INTERACTIONS,
            fractions: Fractions::default(),
        }
    }
}

/// Stages 2 and 3 over already parsed interactions.
pub fn clean(
    interactions: Vec<Interaction>,
    min_interactions: usize,
    report: &mut PreprocessReport,
) -> Vec<Interaction> {
    let n = interactions.len();
    let deduped = dedup_latest(interactions);
    report.duplicates += n - deduped.len();
    report.stage("dedup", n, deduped.len());

    let n = deduped.len();
    let users_before = DatasetCounts::of(&deduped).users;
    let active = filter_low_activity(deduped, min_interactions);
    report.low_activity_interactions += n - active.len();
    report.low_activity_users += users_before - DatasetCounts::of(&active).users;
    report.stage("activity", n, active.len());
    active
}

/// Runs the full four-stage pipeline and the split.
pub fn run_pipeline(
    raw: &[RawRecord],
    config: &PreprocessConfig,
    exec: Execution,
) -> (SplitDataset, PreprocessReport) {
    let mut report = PreprocessReport::default();
    let rewarded = compute_rewards(raw, &mut report);
    let active = clean(rewarded, config.min_interactions, &mut report);
    let split = temporal_split(active, config.fractions, exec);

    let n = split.len();
    let (split, removed_val, removed_test) = enforce_warm_start(split);
    report.warm_start_validation = removed_val;
    report.warm_start_test = removed_test;
    report.stage("warm_start", n, split.len());

    report.split = SplitCounts {
        train: split.train.len(),
        validation: split.validation.len(),
        test: split.test.len(),
    };
    report.final_counts = DatasetCounts::of(split.all());
    (split, report)
}
