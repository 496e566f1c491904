//! Batch execution: data-parallel over rayon when the `parallel` feature is
//! enabled, plain sequential otherwise.
//!
//! Outputs preserve index order in both modes, and reductions downstream
//! always run over the collected vector in fixed order, so results are
//! bit-identical with and without the feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, preserving index order.
pub fn batch_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential reference version of [`batch_map`]; used by the benchmark
/// suite to measure the parallel speedup.
pub fn batch_map_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let f = |i: usize| i * i + 1;
        assert_eq!(batch_map(100, f), batch_map_seq(100, f));
    }
}
