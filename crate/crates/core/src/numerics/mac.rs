//! Instrumented multiply counter.
//!
//! Every kernel in [`crate::numerics`] counts the multiplications its inner
//! loops execute and adds them to a thread-local tally. Only multiplications
//! inside contractions are counted: matmul and linear-layer products, 3x3
//! convolution taps that fall inside the image, and the single reciprocal
//! scale applied to each adaptive-pool output. Elementwise work (activations,
//! softmax, bias and residual adds, logit scaling) is free.

use std::cell::Cell;

use rayon::prelude::*;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn record(n: u64) {
    MACS.with(|c| c.set(c.get().wrapping_add(n)));
}

/// Multiplications recorded on this thread so far.
pub fn current() -> u64 {
    MACS.with(Cell::get)
}

/// Runs `f` and returns its result together with the multiplications it
/// performed. The thread-local tally is left as it was before the call.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = current();
    let out = f();
    let after = current();
    MACS.with(|c| c.set(before));
    (out, after.wrapping_sub(before))
}

/// Parallel ordered map over `0..n` whose per-item multiply counts are
/// credited to the calling thread. `f` must not itself spawn rayon work.
pub(crate) fn par_map_counted<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    let counted: Vec<(R, u64)> = (0..n).into_par_iter().map(|i| measure(|| f(i))).collect();
    let mut total = 0u64;
    let out = counted
        .into_iter()
        .map(|(r, macs)| {
            total += macs;
            r
        })
        .collect();
    record(total);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_restores_tally() {
        let start = current();
        let ((), n) = measure(|| record(5));
        assert_eq!(n, 5);
        assert_eq!(current(), start);
    }

    #[test]
    fn parallel_counts_reach_caller() {
        let (_, n) = measure(|| par_map_counted(10, |i| record(i as u64)));
        assert_eq!(n, 45);
    }
}
