//! Data-parallel helpers. Results never depend on the thread count: work is
//! split into fixed-size chunks and partial results are returned in order.

use alloc::vec::Vec;
use core::ops::Range;

/// Chunk length for [`map_chunks`].
pub(crate) const CHUNK: usize = 256;

#[cfg(feature = "parallel")]
pub(crate) fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Applies `f` to consecutive index ranges of length [`CHUNK`].
#[cfg(feature = "parallel")]
pub(crate) fn map_chunks<R: Send>(n: usize, f: impl Fn(Range<usize>) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    let chunks: Vec<Range<usize>> = (0..n).step_by(CHUNK).map(|a| a..(a + CHUNK).min(n)).collect();
    chunks.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_chunks<R: Send>(n: usize, f: impl Fn(Range<usize>) -> R + Sync + Send) -> Vec<R> {
    (0..n).step_by(CHUNK).map(|a| f(a..(a + CHUNK).min(n))).collect()
}
