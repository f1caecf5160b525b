//! Bayesian-knowledge-tracing learner simulator.
//!
//! Every exercise trains exactly one skill. A learner's learning rate on a
//! skill is shifted by a linear score of their latent profile traits, and
//! the generated profile features are affine in those traits, so part of
//! the skill gain is predictable from context. Mastery decays by a fixed
//! forgetting fraction before each attempt, which keeps gains from
//! vanishing late in a session.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{par_map, Execution};
use crate::io::{create_dir, write_interactions, write_json, write_profiles};
use crate::model::{Interaction, LearnerProfile, CONTINUOUS_FEATURES};
use crate::policy::sampling::standard_normal;
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BktSkillParams {
    pub p_init: f64,
    pub p_transit: f64,
    pub p_guess: f64,
    pub p_slip: f64,
}

impl BktSkillParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(unit(self.p_init) && unit(self.p_transit) && unit(self.p_guess) && unit(self.p_slip)) {
            return Err(Error::Config(format!("BKT parameters must lie in [0, 1]: {self:?}")));
        }
        if self.p_guess >= 0.5 || self.p_slip >= 0.5 {
            return Err(Error::Config(format!("guess and slip must be below 0.5: {self:?}")));
        }
        Ok(())
    }

    /// Probability of a correct response at mastery `m`.
    pub fn p_correct(&self, m: f64) -> f64 {
        m * (1.0 - self.p_slip) + (1.0 - m) * self.p_guess
    }
}

/// One BKT step: Bayesian posterior on the observed response, then the
/// learning transition. A zero evidence denominator leaves `mastery` as is.
pub fn bkt_step(mastery: f64, correct: bool, params: &BktSkillParams) -> f64 {
    let (slip, guess) = (params.p_slip, params.p_guess);
    let (num, other) = if correct {
        (mastery * (1.0 - slip), (1.0 - mastery) * guess)
    } else {
        (mastery * slip, (1.0 - mastery) * (1.0 - guess))
    };
    let denom = num + other;
    let posterior = if denom > 0.0 { num / denom } else { mastery };
    (posterior + (1.0 - posterior) * params.p_transit).clamp(0.0, 1.0)
}

fn default_users() -> usize {
    200
}
fn default_exercises() -> usize {
    300
}
fn default_skills() -> usize {
    10
}
fn default_ability_sd() -> f64 {
    1.0
}
fn default_loadings() -> Vec<f64> {
    vec![0.6; CONTINUOUS_FEATURES.len()]
}
fn default_context_effect() -> Vec<f64> {
    let n = CONTINUOUS_FEATURES.len();
    vec![0.12 / (n as f64).sqrt(); n]
}
fn default_attempts() -> [usize; 2] {
    [160, 240]
}
fn default_forgetting() -> f64 {
    0.2
}
fn default_p_init() -> [f64; 2] {
    [0.1, 0.3]
}
fn default_transit() -> [f64; 2] {
    [0.05, 0.25]
}
fn default_guess() -> [f64; 2] {
    [0.1, 0.25]
}
fn default_slip() -> [f64; 2] {
    [0.05, 0.15]
}
fn default_exercise_rate() -> [f64; 2] {
    [0.4, 1.6]
}
fn default_transit_floor() -> f64 {
    0.005
}
fn default_transit_ceiling() -> f64 {
    0.9
}
fn default_max_transit() -> f64 {
    0.95
}
fn default_start_ms() -> i64 {
    1_104_537_600_000
}

/// Simulation settings. Every field has a default; `[lo, hi]` pairs are
/// uniform sampling ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_users")]
    pub users: usize,
    #[serde(default = "default_exercises")]
    pub exercises: usize,
    #[serde(default = "default_skills")]
    pub skills: usize,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of the latent per-learner ability.
    #[serde(default = "default_ability_sd")]
    pub ability_sd: f64,
    /// Correlation of each latent trait with ability, one per continuous
    /// profile feature.
    #[serde(default = "default_loadings")]
    pub feature_loadings: Vec<f64>,
    /// Weights of the latent traits in the learner's learning-rate shift.
    /// All zeros makes reward independent of context.
    #[serde(default = "default_context_effect")]
    pub context_effect: Vec<f64>,
    /// Inclusive range of attempts per learner.
    #[serde(default = "default_attempts")]
    pub attempts: [usize; 2],
    /// Fraction of mastery lost before each attempt.
    #[serde(default = "default_forgetting")]
    pub forgetting: f64,
    #[serde(default = "default_p_init")]
    pub p_init: [f64; 2],
    #[serde(default = "default_transit")]
    pub p_transit: [f64; 2],
    #[serde(default = "default_guess")]
    pub p_guess: [f64; 2],
    #[serde(default = "default_slip")]
    pub p_slip: [f64; 2],
    /// Per-exercise multiplier on the learning rate.
    #[serde(default = "default_exercise_rate")]
    pub exercise_rate: [f64; 2],
    /// Bounds on a learner's skill learning rate before the exercise
    /// multiplier.
    #[serde(default = "default_transit_floor")]
    pub transit_floor: f64,
    #[serde(default = "default_transit_ceiling")]
    pub transit_ceiling: f64,
    /// Cap on the effective learning rate of one attempt.
    #[serde(default = "default_max_transit")]
    pub max_transit: f64,
    /// Explicit exercise to skill map; balanced random assignment if absent.
    #[serde(default)]
    pub exercise_skills: Option<Vec<usize>>,
    /// Explicit per-skill parameters; sampled from the ranges if absent.
    #[serde(default)]
    pub skill_params: Option<Vec<BktSkillParams>>,
    /// Session start of the earliest learner, Unix milliseconds.
    #[serde(default = "default_start_ms")]
    pub start_ms: i64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.users == 0 || self.exercises == 0 || self.skills == 0 {
            return fail("users, exercises and skills must be positive".into());
        }
        if self.exercises < self.skills && self.exercise_skills.is_none() {
            return fail("need at least one exercise per skill".into());
        }
        let n = CONTINUOUS_FEATURES.len();
        if self.feature_loadings.len() != n || self.context_effect.len() != n {
            return fail(format!("feature_loadings and context_effect need {n} entries"));
        }
        if self.feature_loadings.iter().any(|r| !(-1.0..=1.0).contains(r)) {
            return fail("feature loadings must lie in [-1, 1]".into());
        }
        if self.attempts[0] == 0 || self.attempts[0] > self.attempts[1] {
            return fail(format!("bad attempts range {:?}", self.attempts));
        }
        if !(0.0..=1.0).contains(&self.forgetting) || self.ability_sd.is_nan() || self.ability_sd < 0.0 {
            return fail("forgetting must lie in [0, 1] and ability_sd be non-negative".into());
        }
        for (name, [lo, hi]) in [
            ("p_init", self.p_init),
            ("p_transit", self.p_transit),
            ("p_guess", self.p_guess),
            ("p_slip", self.p_slip),
        ] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return fail(format!("bad {name} range [{lo}, {hi}]"));
            }
        }
        let [lo, hi] = self.exercise_rate;
        if !(0.0 <= lo && lo <= hi) {
            return fail(format!("bad exercise_rate range [{lo}, {hi}]"));
        }
        if !(0.0 <= self.transit_floor
            && self.transit_floor <= self.transit_ceiling
            && self.transit_ceiling <= 1.0
            && (0.0..=1.0).contains(&self.max_transit))
        {
            return fail("transit bounds must satisfy 0 <= floor <= ceiling <= 1".into());
        }
        if let Some(map) = &self.exercise_skills {
            if map.len() != self.exercises || map.iter().any(|&s| s >= self.skills) {
                return fail("exercise_skills must map every exercise to a valid skill".into());
            }
        }
        if let Some(params) = &self.skill_params {
            if params.len() != self.skills {
                return fail("skill_params must have one entry per skill".into());
            }
            params.iter().try_for_each(BktSkillParams::validate)?;
        }
        Ok(())
    }
}

/// The hidden quantities behind a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub skills: Vec<BktSkillParams>,
    /// Sign with which the learner's context score moves each skill's rate.
    pub skill_polarity: Vec<f64>,
    pub exercise_skills: Vec<usize>,
    pub exercise_rates: Vec<f64>,
    pub abilities: Vec<f64>,
    /// Per learner, the linear context score `sum context_effect * trait`.
    pub context_scores: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub interactions: Vec<Interaction>,
    pub profiles: Vec<LearnerProfile>,
    pub truth: GroundTruth,
}

fn uniform(rng: &mut dyn RngCore, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

pub fn user_id(u: usize) -> String {
    format!("u{u:04}")
}

pub fn exercise_id(e: usize) -> String {
    format!("e{e:04}")
}

pub fn skill_id(s: usize) -> String {
    format!("s{s:03}")
}

// feature = centre + spread * trait, clamped to the valid range
const FEATURE_SHAPES: [(f64, f64, f64, f64); 10] = [
    (0.5, 0.12, 0.0, 1.0),
    (0.55, 0.12, 0.0, 1.0),
    (35.0, 8.0, 0.0, 60.0),
    (0.3, 0.06, 0.0, 1.0),
    (0.2, 0.05, 0.0, 1.0),
    (0.25, 0.05, 0.0, 1.0),
    (0.6, 0.06, 0.0, 1.0),
    (0.15, 0.04, 0.0, 1.0),
    (0.1, 0.03, 0.0, 1.0),
    (0.2, 0.05, 0.0, 1.0),
];

const ACADEMIC_YEARS: [&str; 2] = ["2004-2005", "2005-2006"];
const SCHOOLS: usize = 5;
const GENDERS: [&str; 2] = ["F", "M"];

struct World {
    skills: Vec<BktSkillParams>,
    polarity: Vec<f64>,
    exercise_skills: Vec<usize>,
    exercise_rates: Vec<f64>,
}

fn build_world(spec: &SyntheticSpec) -> World {
    let mut rng = rng_from_seed(derive_seed(spec.seed, "synthetic/world"));
    let skills = match &spec.skill_params {
        Some(p) => p.clone(),
        None => (0..spec.skills)
            .map(|_| BktSkillParams {
                p_init: uniform(&mut rng, spec.p_init),
                p_guess: uniform(&mut rng, spec.p_guess),
                p_slip: uniform(&mut rng, spec.p_slip),
                p_transit: uniform(&mut rng, spec.p_transit),
            })
            .collect(),
    };
    let polarity = (0..spec.skills)
        .map(|s| if s % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let exercise_skills = match &spec.exercise_skills {
        Some(m) => m.clone(),
        None => {
            let mut m: Vec<usize> = (0..spec.exercises).map(|e| e % spec.skills).collect();
            m.shuffle(&mut rng);
            m
        }
    };
    let exercise_rates = (0..spec.exercises)
        .map(|_| uniform(&mut rng, spec.exercise_rate))
        .collect();
    World {
        skills,
        polarity,
        exercise_skills,
        exercise_rates,
    }
}

fn skill_rate(spec: &SyntheticSpec, skill: &BktSkillParams, polarity: f64, score: f64) -> f64 {
    (skill.p_transit + polarity * score).clamp(spec.transit_floor, spec.transit_ceiling)
}

fn attempt_rate(spec: &SyntheticSpec, skill_rate: f64, exercise_rate: f64) -> f64 {
    (skill_rate * exercise_rate).min(spec.max_transit)
}

impl GroundTruth {
    /// Effective learning rate of `user` on one attempt of `exercise`.
    pub fn learning_rate(&self, spec: &SyntheticSpec, user: usize, exercise: usize) -> f64 {
        let s = self.exercise_skills[exercise];
        let rate = skill_rate(spec, &self.skills[s], self.skill_polarity[s], self.context_scores[user]);
        attempt_rate(spec, rate, self.exercise_rates[exercise])
    }

    /// Expected skill gain of one attempt at prior mastery `mastery`.
    pub fn expected_gain(&self, spec: &SyntheticSpec, user: usize, exercise: usize, mastery: f64) -> f64 {
        let params = BktSkillParams {
            p_transit: self.learning_rate(spec, user, exercise),
            ..self.skills[self.exercise_skills[exercise]]
        };
        let pc = params.p_correct(mastery);
        pc * bkt_step(mastery, true, &params) + (1.0 - pc) * bkt_step(mastery, false, &params) - mastery
    }
}

struct Learner {
    profile: LearnerProfile,
    ability: f64,
    score: f64,
    interactions: Vec<Interaction>,
}

fn simulate_learner(spec: &SyntheticSpec, world: &World, u: usize) -> Learner {
    let mut rng = rng_from_seed(derive_seed(spec.seed, &format!("synthetic/user/{u}")));
    let ability = spec.ability_sd * standard_normal(&mut rng);
    let traits: Vec<f64> = spec
        .feature_loadings
        .iter()
        .map(|&rho| rho * ability + (1.0 - rho * rho).sqrt() * standard_normal(&mut rng))
        .collect();
    let score: f64 = spec.context_effect.iter().zip(&traits).map(|(w, z)| w * z).sum();

    let feature = |k: usize| {
        let (centre, spread, lo, hi) = FEATURE_SHAPES[k];
        Some((centre + spread * traits[k]).clamp(lo, hi))
    };
    let profile = LearnerProfile {
        user_id: user_id(u),
        academic_year: ACADEMIC_YEARS[rng.random_range(0..ACADEMIC_YEARS.len())].into(),
        school: format!("school-{:02}", rng.random_range(1..=SCHOOLS)),
        gender: GENDERS[rng.random_range(0..GENDERS.len())].into(),
        avg_knowledge_mastery: feature(0),
        overall_correctness: feature(1),
        mcas_score: feature(2),
        confusion: feature(3),
        frustration: feature(4),
        boredom: feature(5),
        engaged_concentration: feature(6),
        carelessness: feature(7),
        gaming: feature(8),
        off_task: feature(9),
    };

    let rates: Vec<f64> = world
        .skills
        .iter()
        .zip(&world.polarity)
        .map(|(p, &pol)| skill_rate(spec, p, pol, score))
        .collect();
    let mut mastery: Vec<f64> = world.skills.iter().map(|p| p.p_init).collect();
    let n = rng.random_range(spec.attempts[0]..=spec.attempts[1]);
    let mut t = spec.start_ms + rng.random_range(0..86_400_000i64);
    let mut interactions = Vec::with_capacity(n);
    for _ in 0..n {
        let e = rng.random_range(0..spec.exercises);
        let s = world.exercise_skills[e];
        mastery[s] *= 1.0 - spec.forgetting;
        let before = mastery[s];
        let step = BktSkillParams {
            p_transit: attempt_rate(spec, rates[s], world.exercise_rates[e]),
            ..world.skills[s]
        };
        let correct = rng.random::<f64>() < step.p_correct(before);
        let after = bkt_step(before, correct, &step);
        mastery[s] = after;
        interactions.push(Interaction {
            user_id: user_id(u),
            exercise_id: exercise_id(e),
            skill_id: skill_id(s),
            timestamp: t,
            row: 0,
            correct,
            mastery_before: before,
            mastery_after: after,
            reward: after - before,
        });
        t += rng.random_range(30_000..600_000i64);
    }
    Learner {
        profile,
        ability,
        score,
        interactions,
    }
}

/// Generates a dataset. Interactions are in global chronological order with
/// `row` set to the output position; identical specs give identical data.
pub fn generate(spec: &SyntheticSpec, exec: Execution) -> Result<SyntheticData> {
    spec.validate()?;
    let world = build_world(spec);
    let learners = par_map(exec, (0..spec.users).collect(), |u| {
        simulate_learner(spec, &world, u)
    });
    let mut interactions = Vec::new();
    let mut profiles = Vec::with_capacity(learners.len());
    let mut abilities = Vec::with_capacity(learners.len());
    let mut context_scores = Vec::with_capacity(learners.len());
    for l in learners {
        interactions.extend(l.interactions);
        profiles.push(l.profile);
        abilities.push(l.ability);
        context_scores.push(l.score);
    }
    interactions.sort_by(|a, b| (a.timestamp, &a.user_id).cmp(&(b.timestamp, &b.user_id)));
    for (k, i) in interactions.iter_mut().enumerate() {
        i.row = k as u64;
    }
    Ok(SyntheticData {
        interactions,
        profiles,
        truth: GroundTruth {
            skills: world.skills,
            skill_polarity: world.polarity,
            exercise_skills: world.exercise_skills,
            exercise_rates: world.exercise_rates,
            abilities,
            context_scores,
        },
    })
}

pub const INTERACTIONS_FILE: &str = "interactions.csv";
pub const PROFILES_FILE: &str = "profiles.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const SPEC_FILE: &str = "spec.json";

/// Writes `interactions.csv`, `profiles.csv`, `truth.json` and the resolved
/// `spec.json` into `dir`.
pub fn write_dataset(data: &SyntheticData, spec: &SyntheticSpec, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_interactions(&dir.join(INTERACTIONS_FILE), &data.interactions)?;
    write_profiles(&dir.join(PROFILES_FILE), &data.profiles)?;
    write_json(&dir.join(TRUTH_FILE), &data.truth)?;
    write_json(&dir.join(SPEC_FILE), spec)
}
