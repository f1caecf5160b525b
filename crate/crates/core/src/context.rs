//! Learner context encoding: one-hot categorical blocks, standardized
//! continuous features and a bias entry.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContextVector, Interaction, LearnerProfile, CONTINUOUS_FEATURES};

/// Vocabularies and standardization statistics fitted on training users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextEncoder {
    pub academic_years: Vec<String>,
    pub schools: Vec<String>,
    pub genders: Vec<String>,
    pub means: Vec<f64>,
    /// Population standard deviations; 1 where the feature is constant.
    pub scales: Vec<f64>,
}

impl ContextEncoder {
    /// `sum(vocabulary sizes) + 10 + 1`.
    pub fn dim(&self) -> usize {
        self.academic_years.len() + self.schools.len() + self.genders.len() + self.means.len() + 1
    }

    pub fn encode(&self, profile: &LearnerProfile) -> ContextVector {
        let mut v = Vec::with_capacity(self.dim());
        for (vocab, value) in [&self.academic_years, &self.schools, &self.genders]
            .into_iter()
            .zip(profile.categorical())
        {
            // unseen categories encode as an all-zero block
            v.extend(vocab.iter().map(|c| if c == value { 1.0 } else { 0.0 }));
        }
        for ((x, mean), scale) in profile.continuous().iter().zip(&self.means).zip(&self.scales) {
            v.push(match x {
                Some(x) => (x - mean) / scale,
                None => 0.0,
            });
        }
        v.push(1.0);
        ContextVector(v)
    }
}

/// Fits the encoder on the profiles of users present in `train`.
pub fn fit_context_encoder(
    profiles: &[LearnerProfile],
    train: &[Interaction],
) -> Result<ContextEncoder> {
    let by_user: HashMap<&str, &LearnerProfile> =
        profiles.iter().map(|p| (p.user_id.as_str(), p)).collect();
    let users: BTreeSet<&str> = train.iter().map(|i| i.user_id.as_str()).collect();
    let missing: Vec<String> = users
        .iter()
        .filter(|u| !by_user.contains_key(*u))
        .map(|u| u.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingProfiles(missing));
    }
    let train_profiles: Vec<&LearnerProfile> = users.iter().map(|u| by_user[u]).collect();

    let vocab = |k: usize| -> Vec<String> {
        let set: BTreeSet<&str> = train_profiles.iter().map(|p| p.categorical()[k]).collect();
        set.into_iter().map(str::to_string).collect()
    };

    let mut means = Vec::with_capacity(CONTINUOUS_FEATURES.len());
    let mut scales = Vec::with_capacity(CONTINUOUS_FEATURES.len());
    for k in 0..CONTINUOUS_FEATURES.len() {
        let values: Vec<f64> = train_profiles
            .iter()
            .filter_map(|p| p.continuous()[k])
            .collect();
        if values.is_empty() {
            means.push(0.0);
            scales.push(1.0);
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        means.push(mean);
        // relative threshold so that float noise on a constant column is zero variance
        scales.push(if sd <= 1e-12 * mean.abs().max(1.0) { 1.0 } else { sd });
    }

    Ok(ContextEncoder {
        academic_years: vocab(0),
        schools: vocab(1),
        genders: vocab(2),
        means,
        scales,
    })
}
