//! Replicate loops.
//!
//! Replicate `i` always draws from `stream.substream(i)`, so results are
//! identical whether the loop runs on the rayon pool or sequentially. The
//! `parallel` feature (on by default) selects the rayon path in [`replicates`].

use crate::rng::RngStream;
use rand_chacha::ChaCha8Rng;

/// Runs `f` for replicates `0..n` on one thread.
pub fn replicates_sequential<T, F>(n: usize, stream: RngStream, f: F) -> Vec<T>
where
    F: Fn(usize, &mut ChaCha8Rng) -> T,
{
    (0..n)
        .map(|i| {
            let mut rng = stream.substream(i as u64).rng();
            f(i, &mut rng)
        })
        .collect()
}

/// Runs `f` for replicates `0..n` on the rayon pool.
#[cfg(feature = "parallel")]
pub fn replicates_parallel<T, F>(n: usize, stream: RngStream, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n)
        .into_par_iter()
        .with_min_len(64)
        .map(|i| {
            let mut rng = stream.substream(i as u64).rng();
            f(i, &mut rng)
        })
        .collect()
}

/// Runs `f` for replicates `0..n`, in parallel when the `parallel` feature is on.
pub fn replicates<T, F>(n: usize, stream: RngStream, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        replicates_parallel(n, stream, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        replicates_sequential(n, stream, f)
    }
}

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
pub fn map_items<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Sizes the global worker pool. Must run before any parallel work; later
/// calls and builds without the `parallel` feature have no effect.
pub fn set_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn parallel_and_sequential_agree() {
        let s = RngStream::new(11, 2);
        let a = replicates_sequential(500, s, |_, r| r.random::<u64>());
        let b = replicates(500, s, |_, r| r.random::<u64>());
        assert_eq!(a, b);
    }
}
