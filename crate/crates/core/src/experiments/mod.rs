//! Synthetic targets, metrics, experiment runners and the command-line
//! driver.

pub mod cli;
pub mod gradcheck;
pub mod hmc_bench;
pub mod loglik;
pub mod oracle;
pub mod ring;
pub mod ringsim;
pub mod topics;

pub use ring::{imbalanced_weights, mode_coverage, ModeCoverage, RingTarget};

use crate::error::{Error, Result};

/// Worker count: `DPGM_THREADS` if set to a positive integer, otherwise the
/// available parallelism.
pub fn threads() -> Result<usize> {
    match std::env::var("DPGM_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("DPGM_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Maps `f` over `items` on up to `threads` scoped workers. Output order
/// matches input order, so results do not depend on the thread count.
pub fn parallel_map<T, R, F>(items: Vec<T>, threads: usize, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> Result<R> + Sync,
{
    let workers = threads.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.into_iter().map(f).collect();
    }
    let n = items.len();
    let mut buckets: Vec<Vec<(usize, T)>> = (0..workers).map(|_| Vec::new()).collect();
    for (i, item) in items.into_iter().enumerate() {
        buckets[i % workers].push((i, item));
    }
    let f = &f;
    let mut slots: Vec<Option<Result<R>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = buckets
            .into_iter()
            .map(|b| s.spawn(move || b.into_iter().map(|(i, t)| (i, f(t))).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let out = parallel_map((0..17).collect(), 4, |i: i32| Ok(i * i)).unwrap();
        assert_eq!(out, (0..17).map(|i| i * i).collect::<Vec<_>>());
        let err = parallel_map(vec![1, 2, 3], 2, |i: i32| {
            if i == 2 {
                Err(Error::Config("two".into()))
            } else {
                Ok(i)
            }
        });
        assert!(err.is_err());
    }
}
