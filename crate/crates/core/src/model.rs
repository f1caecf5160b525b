//! Domain types shared across the crate.

use std::collections::BTreeMap;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One logged learner/exercise event.
///
/// `reward` is the skill gain `mastery_after - mastery_before`. `row` is the
/// position of the record in its source file and breaks timestamp ties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub exercise_id: String,
    pub skill_id: String,
    pub timestamp: i64,
    pub row: u64,
    pub correct: bool,
    pub mastery_before: f64,
    pub mastery_after: f64,
    pub reward: f64,
}

impl Interaction {
    /// Chronological sort key; total because rows are unique per file.
    pub fn order_key(&self) -> (i64, u64) {
        (self.timestamp, self.row)
    }
}

pub const CONTINUOUS_FEATURES: [&str; 10] = [
    "avg_knowledge_mastery",
    "overall_correctness",
    "mcas_score",
    "confusion",
    "frustration",
    "boredom",
    "engaged_concentration",
    "carelessness",
    "gaming",
    "off_task",
];

/// Static per-learner features used to build the context vector.
///
/// Continuous fields may be absent in the source data; absent values encode
/// as the training mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerProfile {
    pub user_id: String,
    pub academic_year: String,
    pub school: String,
    pub gender: String,
    pub avg_knowledge_mastery: Option<f64>,
    pub overall_correctness: Option<f64>,
    pub mcas_score: Option<f64>,
    pub confusion: Option<f64>,
    pub frustration: Option<f64>,
    pub boredom: Option<f64>,
    pub engaged_concentration: Option<f64>,
    pub carelessness: Option<f64>,
    pub gaming: Option<f64>,
    pub off_task: Option<f64>,
}

impl LearnerProfile {
    /// Continuous features in [`CONTINUOUS_FEATURES`] order.
    pub fn continuous(&self) -> [Option<f64>; 10] {
        [
            self.avg_knowledge_mastery,
            self.overall_correctness,
            self.mcas_score,
            self.confusion,
            self.frustration,
            self.boredom,
            self.engaged_concentration,
            self.carelessness,
            self.gaming,
            self.off_task,
        ]
    }

    pub fn categorical(&self) -> [&str; 3] {
        [&self.academic_year, &self.school, &self.gender]
    }

    /// Checks that every probability-like field lies in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        for (name, value) in CONTINUOUS_FEATURES.iter().zip(self.continuous()) {
            let Some(v) = value else { continue };
            if !v.is_finite() {
                return Err(Error::InvalidRecord(format!(
                    "profile {}: {name} is not finite",
                    self.user_id
                )));
            }
            if *name != "mcas_score" && !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidRecord(format!(
                    "profile {}: {name} = {v} outside [0, 1]",
                    self.user_id
                )));
            }
        }
        Ok(())
    }
}

/// Encoded learner context: one-hot categorical blocks, standardized
/// continuous features and a trailing bias entry of 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextVector(pub Vec<f64>);

impl ContextVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// The three chronological partitions of a preprocessed dataset. Each split
/// is in global chronological order `(timestamp, row)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<Interaction>,
    pub validation: Vec<Interaction>,
    pub test: Vec<Interaction>,
}

impl SplitDataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &Interaction> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    /// Returns the validation/test records whose user or exercise never
    /// occurs in train. Empty after warm-start enforcement.
    pub fn warm_start_violations(&self) -> Vec<&Interaction> {
        let users: std::collections::HashSet<&str> =
            self.train.iter().map(|i| i.user_id.as_str()).collect();
        let exercises: std::collections::HashSet<&str> =
            self.train.iter().map(|i| i.exercise_id.as_str()).collect();
        self.validation
            .iter()
            .chain(&self.test)
            .filter(|i| {
                !users.contains(i.user_id.as_str()) || !exercises.contains(i.exercise_id.as_str())
            })
            .collect()
    }
}

/// Dense index assignment for opaque user and exercise identifiers.
///
/// Indices follow first appearance in train, then validation, then test, so
/// they are reproducible from the split files alone.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Catalog {
    pub users: IndexSet<String>,
    pub exercises: IndexSet<String>,
}

impl Catalog {
    pub fn from_split(split: &SplitDataset) -> Self {
        let mut catalog = Catalog::default();
        for i in split.all() {
            catalog.users.insert(i.user_id.clone());
            catalog.exercises.insert(i.exercise_id.clone());
        }
        catalog
    }

    pub fn user_index(&self, id: &str) -> Result<usize> {
        self.users
            .get_index_of(id)
            .ok_or_else(|| Error::UnknownUser(id.to_string()))
    }

    pub fn exercise_index(&self, id: &str) -> Result<usize> {
        self.exercises
            .get_index_of(id)
            .ok_or_else(|| Error::UnknownExercise(id.to_string()))
    }

    pub fn exercise_name(&self, index: usize) -> &str {
        self.exercises
            .get_index(index)
            .map(String::as_str)
            .unwrap_or("?")
    }

    pub fn user_name(&self, index: usize) -> &str {
        self.users.get_index(index).map(String::as_str).unwrap_or("?")
    }
}

/// Sparse user x exercise table of strictly positive skill-gain rewards.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RewardMatrix {
    rows: Vec<BTreeMap<usize, f64>>,
    cols: Vec<BTreeMap<usize, f64>>,
    sum: f64,
    len: usize,
}

impl RewardMatrix {
    pub fn new(users: usize, exercises: usize) -> Self {
        RewardMatrix {
            rows: vec![BTreeMap::new(); users],
            cols: vec![BTreeMap::new(); exercises],
            sum: 0.0,
            len: 0,
        }
    }

    pub fn from_entries(
        users: usize,
        exercises: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut m = RewardMatrix::new(users, exercises);
        for (u, a, r) in entries {
            m.insert(u, a, r)?;
        }
        Ok(m)
    }

    pub fn users(&self) -> usize {
        self.rows.len()
    }

    pub fn exercises(&self) -> usize {
        self.cols.len()
    }

    /// Number of stored entries.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Inserts or overwrites the reward of `(user, exercise)`.
    pub fn insert(&mut self, user: usize, exercise: usize, reward: f64) -> Result<()> {
        if user >= self.rows.len() {
            return Err(Error::UnknownUser(user.to_string()));
        }
        if exercise >= self.cols.len() {
            return Err(Error::UnknownExercise(exercise.to_string()));
        }
        if !(reward > 0.0 && reward.is_finite()) {
            return Err(Error::InvalidRecord(format!(
                "reward matrix entries must be strictly positive, got {reward} for ({user}, {exercise})"
            )));
        }
        match self.rows[user].insert(exercise, reward) {
            Some(old) => self.sum += reward - old,
            None => {
                self.sum += reward;
                self.len += 1;
            }
        }
        self.cols[exercise].insert(user, reward);
        Ok(())
    }

    pub fn get(&self, user: usize, exercise: usize) -> Option<f64> {
        self.rows.get(user)?.get(&exercise).copied()
    }

    /// Entries of one user, sorted by exercise index.
    pub fn row(&self, user: usize) -> &BTreeMap<usize, f64> {
        &self.rows[user]
    }

    /// Entries of one exercise, sorted by user index.
    pub fn col(&self, exercise: usize) -> &BTreeMap<usize, f64> {
        &self.cols[exercise]
    }

    pub(crate) fn row_maps(&self) -> &[BTreeMap<usize, f64>] {
        &self.rows
    }

    pub(crate) fn col_maps(&self) -> &[BTreeMap<usize, f64>] {
        &self.cols
    }

    /// Mean of all stored rewards; 0 when empty.
    pub fn global_mean(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.sum / self.len as f64
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |(&a, &r)| (u, a, r)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_matrix_overwrite_keeps_one_entry() {
        let mut m = RewardMatrix::new(2, 2);
        m.insert(0, 1, 0.2).unwrap();
        m.insert(0, 1, 0.4).unwrap();
        m.insert(1, 0, 0.1).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.get(0, 1), Some(0.4));
        assert_eq!(m.col(1).get(&0), Some(&0.4));
        assert!((m.global_mean() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn reward_matrix_rejects_non_positive() {
        let mut m = RewardMatrix::new(1, 1);
        assert!(m.insert(0, 0, 0.0).is_err());
        assert!(m.insert(0, 0, -0.1).is_err());
        assert!(m.insert(1, 0, 0.1).is_err());
        assert!(m.is_empty());
    }

    #[test]
    fn catalog_indices_follow_split_order() {
        let mk = |u: &str, e: &str, t: i64| Interaction {
            user_id: u.into(),
            exercise_id: e.into(),
            skill_id: "s".into(),
            timestamp: t,
            row: t as u64,
            correct: true,
            mastery_before: 0.1,
            mastery_after: 0.2,
            reward: 0.1,
        };
        let split = SplitDataset {
            train: vec![mk("b", "x", 1), mk("a", "y", 2)],
            validation: vec![mk("a", "x", 3)],
            test: vec![mk("c", "z", 4)],
        };
        let c = Catalog::from_split(&split);
        assert_eq!(c.user_index("b").unwrap(), 0);
        assert_eq!(c.exercise_index("z").unwrap(), 2);
        assert!(matches!(c.user_index("q"), Err(Error::UnknownUser(_))));
        assert_eq!(split.warm_start_violations().len(), 1);
    }
}
