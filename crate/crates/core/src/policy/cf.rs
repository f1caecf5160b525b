//! User- and item-based neighbourhood collaborative filtering over the
//! skill-gain reward matrix.
//!
//! Missing matrix entries count as zero in similarity computations. A
//! prediction whose similarity mass is zero falls back to the global mean
//! reward of the matrix.

use std::collections::{BTreeMap, HashMap};

use rand::RngCore;

use super::{argmax_candidate, Policy, PolicyKind};
use crate::error::{Error, Result};
use crate::model::{ContextVector, RewardMatrix};
use crate::seed::hex_digest;

pub const DEFAULT_CF_BATCH: usize = 1000;

/// Cosine similarity of two sparse vectors given as index-sorted pairs.
/// Zero when either vector has zero norm.
pub fn cosine_sim(x: &[(usize, f64)], y: &[(usize, f64)]) -> f64 {
    let norm = |v: &[(usize, f64)]| v.iter().map(|(_, a)| a * a).sum::<f64>().sqrt();
    let (nx, ny) = (norm(x), norm(y));
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < x.len() && j < y.len() {
        match x[i].0.cmp(&y[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += x[i].1 * y[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    (dot / (nx * ny)).clamp(-1.0, 1.0)
}

fn norm_of(map: &BTreeMap<usize, f64>) -> f64 {
    map.values().map(|r| r * r).sum::<f64>().sqrt()
}

/// Similarities of one target (user or exercise) to all its peers.
#[derive(Clone, Debug, Default)]
struct Neighbours {
    // sorted by peer index, nonzero only
    sims: Vec<(usize, f64)>,
    abs_sum: f64,
}

impl Neighbours {
    fn get(&self, peer: usize) -> f64 {
        self.sims
            .binary_search_by_key(&peer, |&(p, _)| p)
            .map(|k| self.sims[k].1)
            .unwrap_or(0.0)
    }

    /// `sum sim(peer) * value / sum |sim|` over the given peer entries,
    /// skipping `exclude`; `None` when the similarity mass is zero.
    fn weighted_average<'a>(
        &self,
        entries: impl Iterator<Item = (&'a usize, &'a f64)>,
        exclude: usize,
    ) -> Option<f64> {
        if self.abs_sum == 0.0 {
            return None;
        }
        let num: f64 = entries
            .filter(|(&p, _)| p != exclude)
            .map(|(&p, &r)| self.get(p) * r)
            .sum();
        Some(num / self.abs_sum)
    }
}

/// Similarities of `target` to every other index along one matrix axis.
/// `primary[target]` is the target's vector; `secondary` is the transposed
/// view used to reach peers sharing a coordinate.
fn neighbours(
    primary: &[BTreeMap<usize, f64>],
    secondary: &[BTreeMap<usize, f64>],
    target: usize,
    norms: &dyn Fn(usize) -> f64,
) -> Neighbours {
    let target_norm = norms(target);
    if target_norm == 0.0 {
        return Neighbours::default();
    }
    let mut dots: BTreeMap<usize, f64> = BTreeMap::new();
    for (&coord, &r) in &primary[target] {
        for (&peer, &s) in &secondary[coord] {
            if peer != target {
                *dots.entry(peer).or_default() += r * s;
            }
        }
    }
    let sims: Vec<(usize, f64)> = dots
        .into_iter()
        .filter_map(|(peer, dot)| {
            let n = norms(peer);
            let sim = if n == 0.0 {
                0.0
            } else {
                (dot / (target_norm * n)).clamp(-1.0, 1.0)
            };
            (sim != 0.0).then_some((peer, sim))
        })
        .collect();
    let abs_sum = sims.iter().map(|(_, s)| s.abs()).sum();
    Neighbours { sims, abs_sum }
}

fn check_indices(r: &RewardMatrix, user: usize, exercise: usize) -> Result<()> {
    if user >= r.users() {
        return Err(Error::UnknownUser(user.to_string()));
    }
    if exercise >= r.exercises() {
        return Err(Error::UnknownExercise(exercise.to_string()));
    }
    Ok(())
}

fn user_neighbours(r: &RewardMatrix, user: usize) -> Neighbours {
    let (rows, cols) = (r.row_maps(), r.col_maps());
    neighbours(rows, cols, user, &|u| norm_of(&rows[u]))
}

fn item_neighbours(r: &RewardMatrix, exercise: usize) -> Neighbours {
    let (rows, cols) = (r.row_maps(), r.col_maps());
    neighbours(cols, rows, exercise, &|a| norm_of(&cols[a]))
}

/// User-based prediction: similarity-weighted average of other learners'
/// rewards on `exercise`.
pub fn usercf_predict(r: &RewardMatrix, user: usize, exercise: usize) -> Result<f64> {
    check_indices(r, user, exercise)?;
    Ok(user_neighbours(r, user)
        .weighted_average(r.col(exercise).iter(), user)
        .unwrap_or_else(|| r.global_mean()))
}

/// Item-based prediction: similarity-weighted average of the learner's own
/// rewards on other exercises.
pub fn itemcf_predict(r: &RewardMatrix, user: usize, exercise: usize) -> Result<f64> {
    check_indices(r, user, exercise)?;
    Ok(item_neighbours(r, exercise)
        .weighted_average(r.row(user).iter(), exercise)
        .unwrap_or_else(|| r.global_mean()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CfKind {
    User,
    Item,
}

/// CF policy with a buffered reward matrix. Updates become visible in
/// batches of `batch_size`, or on `flush`.
#[derive(Clone, Debug)]
pub struct CollaborativeFiltering {
    kind: CfKind,
    matrix: RewardMatrix,
    pending: Vec<(usize, usize, f64)>,
    batch_size: usize,
    row_norms: Vec<f64>,
    col_norms: Vec<f64>,
    cache: HashMap<usize, Neighbours>,
}

impl CollaborativeFiltering {
    pub fn new(kind: CfKind, users: usize, exercises: usize, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("CF batch size must be at least 1".into()));
        }
        Ok(CollaborativeFiltering {
            kind,
            matrix: RewardMatrix::new(users, exercises),
            pending: Vec::new(),
            batch_size,
            row_norms: vec![0.0; users],
            col_norms: vec![0.0; exercises],
            cache: HashMap::new(),
        })
    }

    pub fn matrix(&self) -> &RewardMatrix {
        &self.matrix
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    fn apply_pending(&mut self) -> Result<()> {
        if self.pending.is_empty() {
            return Ok(());
        }
        for (u, a, r) in std::mem::take(&mut self.pending) {
            self.matrix.insert(u, a, r)?;
        }
        self.row_norms = self.matrix.row_maps().iter().map(norm_of).collect();
        self.col_norms = self.matrix.col_maps().iter().map(norm_of).collect();
        self.cache.clear();
        Ok(())
    }

    fn neighbours_of(&mut self, target: usize) -> &Neighbours {
        let (kind, matrix) = (self.kind, &self.matrix);
        let (row_norms, col_norms) = (&self.row_norms, &self.col_norms);
        self.cache.entry(target).or_insert_with(|| match kind {
            CfKind::User => neighbours(
                matrix.row_maps(),
                matrix.col_maps(),
                target,
                &|u| row_norms[u],
            ),
            CfKind::Item => neighbours(
                matrix.col_maps(),
                matrix.row_maps(),
                target,
                &|a| col_norms[a],
            ),
        })
    }

    /// Current prediction for `(user, exercise)` from applied entries only.
    pub fn predict(&mut self, user: usize, exercise: usize) -> Result<f64> {
        check_indices(&self.matrix, user, exercise)?;
        let mean = self.matrix.global_mean();
        let pred = match self.kind {
            CfKind::User => {
                let col: Vec<(usize, f64)> =
                    self.matrix.col(exercise).iter().map(|(&u, &r)| (u, r)).collect();
                self.neighbours_of(user)
                    .weighted_average(col.iter().map(|(u, r)| (u, r)), user)
            }
            CfKind::Item => {
                let row: Vec<(usize, f64)> =
                    self.matrix.row(user).iter().map(|(&a, &r)| (a, r)).collect();
                self.neighbours_of(exercise)
                    .weighted_average(row.iter().map(|(a, r)| (a, r)), exercise)
            }
        };
        Ok(pred.unwrap_or(mean))
    }
}

impl Policy for CollaborativeFiltering {
    fn kind(&self) -> PolicyKind {
        match self.kind {
            CfKind::User => PolicyKind::Usercf,
            CfKind::Item => PolicyKind::Itemcf,
        }
    }

    fn select(
        &mut self,
        user: usize,
        _context: Option<&ContextVector>,
        candidates: &[usize],
        _rng: &mut dyn RngCore,
    ) -> Result<usize> {
        if candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let scores = candidates
            .iter()
            .map(|&a| self.predict(user, a))
            .collect::<Result<Vec<f64>>>()?;
        argmax_candidate(candidates, &scores)
    }

    fn update(
        &mut self,
        user: usize,
        _context: Option<&ContextVector>,
        exercise: usize,
        reward: f64,
    ) -> Result<()> {
        check_indices(&self.matrix, user, exercise)?;
        self.pending.push((user, exercise, reward));
        if self.pending.len() >= self.batch_size {
            self.apply_pending()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.apply_pending()
    }

    fn snapshot(&self) -> serde_json::Value {
        let bytes: Vec<u8> = self
            .matrix
            .entries()
            .flat_map(|(u, a, r)| {
                let mut b = (u as u64).to_le_bytes().to_vec();
                b.extend((a as u64).to_le_bytes());
                b.extend(r.to_le_bytes());
                b
            })
            .collect();
        serde_json::json!({
            "policy": self.kind().name(),
            "entries": self.matrix.len(),
            "pending": self.pending.len(),
            "digest": hex_digest(&bytes),
        })
    }
}
