//! Batch-chunk parallelism. Chunks are fixed-size and partial results are
//! reduced in chunk order, so outputs do not depend on the thread count.

use alloc::vec::Vec;

/// Applies `f(chunk_index, chunk)` to consecutive `chunk`-sized pieces of
/// `data` and collects the results in order.
pub(crate) fn chunked_map<T, R, F>(data: &mut [T], chunk: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut [T]) -> R + Sync + Send,
{
    #[cfg(feature = "std")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
    }
    #[cfg(not(feature = "std"))]
    {
        data.chunks_mut(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
    }
}
