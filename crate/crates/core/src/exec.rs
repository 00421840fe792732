//! Execution seam for data-parallel loops.
//!
//! Every batch loop in this crate (rollout groups, verification, eval
//! repetitions, minibatch scoring) is an index-addressed map whose items are
//! independent by construction: randomness comes from counter-based seed
//! streams, never from shared mutable state. `map_indexed` therefore runs on
//! rayon when the `parallel` feature is enabled and as a plain loop
//! otherwise, and both paths collect results in index order, so downstream
//! reductions see identical operand order and produce bit-identical floats.
//!
//! `map_indexed_seq` is always compiled; it exists so tests and benches can
//! compare the two paths directly in a single build.

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
///
/// Results are returned in index order regardless of scheduling.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n` sequentially (the `parallel` feature is off).
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_seq(n, f)
}

/// Sequential twin of [`map_indexed`]; always available for comparison.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_preserve_index_order() {
        let par: Vec<usize> = map_indexed(100, |i| i * i);
        let seq: Vec<usize> = map_indexed_seq(100, |i| i * i);
        assert_eq!(par, seq);
    }

    #[test]
    fn float_results_are_bit_identical() {
        // The closure mixes operations whose results depend on evaluation
        // order; index-ordered collection makes both paths agree exactly.
        let f = |i: usize| ((i as f64) * 0.1).sin() / (1.0 + i as f64);
        let par: Vec<f64> = map_indexed(1000, f);
        let seq: Vec<f64> = map_indexed_seq(1000, f);
        for (a, b) in par.iter().zip(seq.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
