//! Offline replay evaluation.
//!
//! Logged events are streamed in global chronological order. At each event
//! the event's learner is offered the exercises they have a logged reward
//! for in the active split, minus those already recommended to them in this
//! replay; the policy picks one and receives its logged skill gain.
//!
//! Each learner takes part in the first `ceil(horizon * n)` of their `n`
//! events in the split. With `horizon = 1` every logged exercise ends up
//! recommended, so the mean reward is the same for every policy; a smaller
//! horizon makes the choice of exercises matter.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context::ContextEncoder;
use crate::error::{Error, Result};
use crate::io::{read_interactions, read_json, read_profiles, write_json};
use crate::model::{Catalog, ContextVector, Interaction, LearnerProfile, SplitDataset};
use crate::policy::Policy;
use crate::seed::{hex_digest, rng_from_seed, Rng as SeededRng};

pub const DEFAULT_WARM_START_ROUNDS: usize = 1000;
pub const DEFAULT_EVAL_HORIZON: f64 = 0.5;
pub const DEFAULT_WINDOW: usize = 10_000;

pub const TRAIN_FILE: &str = "train.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const TEST_FILE: &str = "test.csv";
pub const ENCODER_FILE: &str = "encoder.json";
pub const PROFILES_FILE: &str = "profiles.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Train,
    Validation,
    Test,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Train, Stage::Validation, Stage::Test];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Train => "train",
            Stage::Validation => "validation",
            Stage::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Stage::Train),
            "validation" | "val" => Ok(Stage::Validation),
            "test" => Ok(Stage::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub user: usize,
    pub exercise: usize,
    pub reward: f64,
}

/// One split in catalog indices.
#[derive(Clone, Debug, Default)]
pub struct SplitTable {
    /// Chronological.
    pub events: Vec<Event>,
    /// Per user, logged reward of each exercise.
    pub rewards: Vec<BTreeMap<usize, f64>>,
    /// Per user, number of events.
    pub counts: Vec<usize>,
}

impl SplitTable {
    fn build(interactions: &[Interaction], catalog: &Catalog) -> Result<Self> {
        let users = catalog.users.len();
        let mut table = SplitTable {
            events: Vec::with_capacity(interactions.len()),
            rewards: vec![BTreeMap::new(); users],
            counts: vec![0; users],
        };
        let mut sorted: Vec<&Interaction> = interactions.iter().collect();
        sorted.sort_by_key(|i| i.order_key());
        for i in sorted {
            let user = catalog.user_index(&i.user_id)?;
            let exercise = catalog.exercise_index(&i.exercise_id)?;
            table.events.push(Event {
                user,
                exercise,
                reward: i.reward,
            });
            table.rewards[user].insert(exercise, i.reward);
            table.counts[user] += 1;
        }
        Ok(table)
    }

    /// Exercises logged for `user` that are not in `recommended`, ascending.
    pub fn candidates(&self, user: usize, recommended: &HashSet<usize>) -> Vec<usize> {
        self.rewards[user]
            .keys()
            .copied()
            .filter(|a| !recommended.contains(a))
            .collect()
    }

    /// Mean logged reward; 0 for an empty split.
    pub fn mean_reward(&self) -> f64 {
        if self.events.is_empty() {
            0.0
        } else {
            self.events.iter().map(|e| e.reward).sum::<f64>() / self.events.len() as f64
        }
    }
}

/// Candidate set for one round: logged exercises of `user` in `split`
/// minus those already recommended.
pub fn build_candidates(split: &SplitTable, user: usize, recommended: &HashSet<usize>) -> Vec<usize> {
    split.candidates(user, recommended)
}

/// Everything a replay needs, in dense indices.
#[derive(Clone, Debug)]
pub struct ReplayData {
    pub catalog: Catalog,
    /// Per user context, present when an encoder was supplied.
    pub contexts: Option<Vec<ContextVector>>,
    splits: [SplitTable; 3],
    fingerprint: String,
}

impl ReplayData {
    /// Indexes a split dataset. With `context`, every learner needs a
    /// profile. Validation and test must only contain learners and
    /// exercises that occur in train.
    pub fn new(
        split: &SplitDataset,
        context: Option<(&ContextEncoder, &[LearnerProfile])>,
    ) -> Result<Self> {
        check_warm_start(split)?;
        let catalog = Catalog::from_split(split);
        let splits = [
            SplitTable::build(&split.train, &catalog)?,
            SplitTable::build(&split.validation, &catalog)?,
            SplitTable::build(&split.test, &catalog)?,
        ];
        let contexts = match context {
            None => None,
            Some((encoder, profiles)) => Some(encode_users(&catalog, encoder, profiles)?),
        };
        let fingerprint = fingerprint(split, context.map(|(e, _)| e));
        Ok(ReplayData {
            catalog,
            contexts,
            splits,
            fingerprint,
        })
    }

    /// Loads a preprocessed data directory. Contexts are built when
    /// `encoder.json` is present.
    pub fn load(dir: &Path) -> Result<Self> {
        let split = load_split(dir)?;
        let encoder_path = dir.join(ENCODER_FILE);
        if encoder_path.exists() {
            let encoder: ContextEncoder = read_json(&encoder_path)?;
            let profiles_path = dir.join(PROFILES_FILE);
            if !profiles_path.exists() {
                return Err(Error::MissingFile(profiles_path));
            }
            let profiles = read_profiles(&profiles_path)?;
            ReplayData::new(&split, Some((&encoder, &profiles)))
        } else {
            ReplayData::new(&split, None)
        }
    }

    pub fn split(&self, stage: Stage) -> &SplitTable {
        &self.splits[stage.index()]
    }

    pub fn users(&self) -> usize {
        self.catalog.users.len()
    }

    pub fn exercises(&self) -> usize {
        self.catalog.exercises.len()
    }

    /// Context dimension, 0 without contexts.
    pub fn context_dim(&self) -> usize {
        self.contexts
            .as_ref()
            .and_then(|c| c.first())
            .map_or(0, ContextVector::dim)
    }

    /// Content hash of the splits and encoder.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

pub fn load_split(dir: &Path) -> Result<SplitDataset> {
    let read = |name: &str| {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        read_interactions(&path)
    };
    Ok(SplitDataset {
        train: read(TRAIN_FILE)?,
        validation: read(VALIDATION_FILE)?,
        test: read(TEST_FILE)?,
    })
}

fn check_warm_start(split: &SplitDataset) -> Result<()> {
    if let Some(i) = split.warm_start_violations().first() {
        return Err(Error::Invariant(format!(
            "warm-start violated: ({}, {}) is not covered by train",
            i.user_id, i.exercise_id
        )));
    }
    Ok(())
}

fn encode_users(
    catalog: &Catalog,
    encoder: &ContextEncoder,
    profiles: &[LearnerProfile],
) -> Result<Vec<ContextVector>> {
    let by_user: HashMap<&str, &LearnerProfile> =
        profiles.iter().map(|p| (p.user_id.as_str(), p)).collect();
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(catalog.users.len());
    for user in &catalog.users {
        match by_user.get(user.as_str()) {
            Some(p) => out.push(encoder.encode(p)),
            None => missing.push(user.clone()),
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::MissingProfiles(missing));
    }
    Ok(out)
}

fn fingerprint(split: &SplitDataset, encoder: Option<&ContextEncoder>) -> String {
    let mut bytes = Vec::new();
    for (name, part) in [
        ("train", &split.train),
        ("validation", &split.validation),
        ("test", &split.test),
    ] {
        bytes.extend(name.as_bytes());
        for i in part {
            bytes.extend(i.user_id.as_bytes());
            bytes.push(0);
            bytes.extend(i.exercise_id.as_bytes());
            bytes.push(0);
            bytes.extend(i.timestamp.to_le_bytes());
            bytes.extend(i.reward.to_le_bytes());
        }
    }
    if let Some(e) = encoder {
        bytes.extend(serde_json::to_vec(e).expect("encoder serializes"));
    }
    hex_digest(&bytes)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based.
    pub round: usize,
    pub user: usize,
    pub exercise: usize,
    pub reward: f64,
    pub cum_avg: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayTrace {
    pub records: Vec<TraceRecord>,
    /// Selection count per exercise index.
    pub counts: Vec<usize>,
    /// Rounds with an empty candidate set.
    pub skipped: usize,
    /// Rounds decided by the random warm-start phase.
    pub warm_start: usize,
}

impl ReplayTrace {
    pub fn rounds(&self) -> usize {
        self.records.len()
    }

    /// Final cumulative average reward; 0 for an empty trace.
    pub fn mean_reward(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cum_avg)
    }

    /// Selection counts over the first and last `window` rounds; a window
    /// longer than the trace covers all of it.
    pub fn windows(&self, window: usize) -> (Vec<usize>, Vec<usize>) {
        let w = window.min(self.records.len());
        let count = |recs: &[TraceRecord]| {
            let mut c = vec![0; self.counts.len()];
            for r in recs {
                c[r.exercise] += 1;
            }
            c
        };
        (
            count(&self.records[..w]),
            count(&self.records[self.records.len() - w..]),
        )
    }

    /// Cumulative-average consistency and count conservation.
    pub fn check(&self) -> Result<()> {
        let mut sum = 0.0;
        for (t, r) in self.records.iter().enumerate() {
            sum += r.reward;
            if r.round != t + 1 {
                return Err(Error::Invariant(format!("round {} out of sequence", r.round)));
            }
            if (r.cum_avg - sum / (t + 1) as f64).abs() > 1e-12 {
                return Err(Error::Invariant(format!(
                    "cumulative average inconsistent at round {}",
                    r.round
                )));
            }
        }
        let total: usize = self.counts.iter().sum();
        if total != self.records.len() {
            return Err(Error::Invariant(format!(
                "selection counts sum to {total}, expected {} rounds",
                self.records.len()
            )));
        }
        Ok(())
    }
}

/// How one replay pass treats the policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReplayMode {
    /// Whether `update` is called.
    pub learn: bool,
    /// Fraction of each learner's events that become rounds.
    pub horizon: f64,
}

impl ReplayMode {
    /// Learning over every logged event.
    pub const TRAINING: ReplayMode = ReplayMode {
        learn: true,
        horizon: 1.0,
    };

    pub fn evaluation(learn: bool, horizon: f64) -> Self {
        ReplayMode { learn, horizon }
    }
}

/// Randomness and warm-start budget shared by the consecutive replays of
/// one policy.
pub struct ReplaySession {
    rng: SeededRng,
    warm_start_remaining: usize,
}

impl ReplaySession {
    pub fn new(seed: u64, warm_start_rounds: usize) -> Self {
        ReplaySession {
            rng: rng_from_seed(seed),
            warm_start_remaining: warm_start_rounds,
        }
    }

    pub fn warm_start_remaining(&self) -> usize {
        self.warm_start_remaining
    }

    /// One replay pass over `stage`. Warm-start rounds are only spent by
    /// learning passes of policies that use them. A learning pass ends with
    /// a flush.
    pub fn run(
        &mut self,
        data: &ReplayData,
        policy: &mut dyn Policy,
        stage: Stage,
        mode: ReplayMode,
    ) -> Result<ReplayTrace> {
        if !(mode.horizon > 0.0 && mode.horizon <= 1.0) {
            return Err(Error::Config(format!(
                "horizon must lie in (0, 1], got {}",
                mode.horizon
            )));
        }
        let split = data.split(stage);
        let limits: Vec<usize> = split
            .counts
            .iter()
            .map(|&n| ((mode.horizon * n as f64) - 1e-9).ceil().max(0.0) as usize)
            .collect();
        let mut seen = vec![0usize; data.users()];
        let mut recommended: Vec<HashSet<usize>> = vec![HashSet::new(); data.users()];
        let mut trace = ReplayTrace {
            counts: vec![0; data.exercises()],
            ..Default::default()
        };
        let warm = mode.learn && policy.uses_warm_start();
        let mut sum = 0.0;

        for event in &split.events {
            let u = event.user;
            seen[u] += 1;
            if seen[u] > limits[u] {
                continue;
            }
            let candidates = build_candidates(split, u, &recommended[u]);
            if candidates.is_empty() {
                trace.skipped += 1;
                continue;
            }
            let context = data.contexts.as_ref().map(|c| &c[u]);
            let choice = if warm && self.warm_start_remaining > 0 {
                self.warm_start_remaining -= 1;
                trace.warm_start += 1;
                candidates[self.rng.random_range(0..candidates.len())]
            } else {
                policy.select(u, context, &candidates, &mut self.rng)?
            };
            if candidates.binary_search(&choice).is_err() {
                return Err(Error::Invariant(format!(
                    "{} recommended exercise {} outside the candidate set of user {}",
                    policy.kind(),
                    data.catalog.exercise_name(choice),
                    data.catalog.user_name(u)
                )));
            }
            let reward = *split.rewards[u].get(&choice).ok_or_else(|| {
                Error::Invariant(format!(
                    "no logged reward for ({}, {})",
                    data.catalog.user_name(u),
                    data.catalog.exercise_name(choice)
                ))
            })?;
            if !recommended[u].insert(choice) {
                return Err(Error::Invariant(format!(
                    "exercise {} recommended twice to user {}",
                    data.catalog.exercise_name(choice),
                    data.catalog.user_name(u)
                )));
            }
            if mode.learn {
                policy.update(u, context, choice, reward)?;
            }
            sum += reward;
            let round = trace.records.len() + 1;
            trace.records.push(TraceRecord {
                round,
                user: u,
                exercise: choice,
                reward,
                cum_avg: sum / round as f64,
            });
            trace.counts[choice] += 1;
        }
        if mode.learn {
            policy.flush()?;
        }
        trace.check()?;
        Ok(trace)
    }

    /// Learning passes over `stages` in order, every logged event a round.
    pub fn pretrain(
        &mut self,
        data: &ReplayData,
        policy: &mut dyn Policy,
        stages: &[Stage],
    ) -> Result<Vec<ReplayTrace>> {
        stages
            .iter()
            .map(|&s| self.run(data, policy, s, ReplayMode::TRAINING))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowCounts {
    pub window: usize,
    pub first: BTreeMap<String, usize>,
    pub last: BTreeMap<String, usize>,
}

fn named_counts(catalog: &Catalog, counts: &[usize]) -> BTreeMap<String, usize> {
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(a, &c)| (catalog.exercise_name(a).to_string(), c))
        .collect()
}

pub const TRACE_FILE: &str = "trace.csv";
pub const ACTION_FREQ_FILE: &str = "action_freq.json";
pub const WINDOWS_FILE: &str = "windows.json";

/// Writes `trace.csv`, `action_freq.json` and `windows.json` into `dir`.
pub fn emit_metrics(trace: &ReplayTrace, catalog: &Catalog, dir: &Path, window: usize) -> Result<()> {
    crate::io::create_dir(dir)?;
    let path = dir.join(TRACE_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "round,reward,cum_avg")?;
        for r in &trace.records {
            writeln!(w, "{},{},{}", r.round, r.reward, r.cum_avg)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(&path, e))?;

    write_json(&dir.join(ACTION_FREQ_FILE), &named_counts(catalog, &trace.counts))?;
    let (first, last) = trace.windows(window);
    write_json(
        &dir.join(WINDOWS_FILE),
        &WindowCounts {
            window: window.min(trace.rounds()),
            first: named_counts(catalog, &first),
            last: named_counts(catalog, &last),
        },
    )
}

/// Reads the `cum_avg` column of a `trace.csv`.
pub fn read_trace_cum_avg(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    let col = headers.iter().position(|h| h == "cum_avg").ok_or_else(|| {
        Error::InvalidRecord(format!("{}: missing column `cum_avg`", path.display()))
    })?;
    reader
        .records()
        .map(|r| {
            let r = r?;
            r.get(col)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidRecord(format!("{}: bad cum_avg", path.display())))
        })
        .collect()
}
