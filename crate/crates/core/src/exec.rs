//! Data-parallel execution of independent jobs.
//!
//! Every caller hands over a list of self-contained jobs (one grid
//! configuration and seed, one synthetic learner, ...). Results come back in
//! input order regardless of the execution mode, so outputs are identical
//! between sequential and parallel runs.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Maps `f` over `items`, preserving order.
///
/// Without the `parallel` feature `Execution::Parallel` falls back to a
/// sequential loop.
pub fn par_map<T, R, F>(exec: Execution, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.into_par_iter().map(f).collect()
        }
        _ => items.into_iter().map(f).collect(),
    }
}

/// Like [`par_map`] for fallible jobs; the first error in input order wins.
pub fn try_par_map<T, R, E, F>(exec: Execution, items: Vec<T>, f: F) -> Result<Vec<R>, E>
where
    T: Send,
    R: Send,
    E: Send,
    F: Fn(T) -> Result<R, E> + Sync + Send,
{
    par_map(exec, items, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = par_map(Execution::Sequential, items.clone(), |x| x * x + 1);
        let par = par_map(Execution::Parallel, items, |x| x * x + 1);
        assert_eq!(seq, par);
        assert_eq!(seq[10], 101);
    }

    #[test]
    fn first_error_in_input_order() {
        let r: Result<Vec<u32>, u32> = try_par_map(Execution::Parallel, vec![1, 2, 3, 4], |x| {
            if x % 2 == 0 {
                Err(x)
            } else {
                Ok(x)
            }
        });
        assert_eq!(r, Err(2));
    }
}
