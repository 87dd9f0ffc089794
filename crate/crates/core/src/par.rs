//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature the items fan out over a rayon pool of
//! `jobs` threads; without it (or with `jobs <= 1`) they run in order on the
//! calling thread. Results come back in input order either way, so callers
//! never observe the schedule.

/// Maps `f` over `items`, preserving order.
pub fn par_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if jobs > 1 && items.len() > 1 {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                Ok(pool) => return pool.install(|| items.par_iter().map(&f).collect()),
                Err(_) => return items.iter().map(f).collect(),
            }
        }
    }
    let _ = jobs;
    items.iter().map(f).collect()
}

/// Whether this build can actually run work items concurrently.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_for_any_job_count() {
        let items: Vec<u64> = (0..200).collect();
        let expected: Vec<u64> = items.iter().map(|x| x * x + 1).collect();
        for jobs in [0, 1, 2, 7] {
            assert_eq!(par_map(&items, jobs, |x| x * x + 1), expected);
        }
        assert!(par_map(&Vec::<u64>::new(), 4, |x| *x).is_empty());
    }
}
