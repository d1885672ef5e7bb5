//! Data-parallel iteration helpers.
//!
//! With the `parallel` feature (default) the macros expand to rayon parallel
//! iterators; without it they fall back to sequential iterators. Every use
//! site is an order-preserving map/collect, so results are identical either
//! way.

#[cfg(feature = "parallel")]
pub use rayon::prelude::*;

/// `par_iter!(collection)` -> `collection.par_iter()` or `collection.iter()`.
macro_rules! par_iter {
    ($e:expr) => {{
        #[cfg(feature = "parallel")]
        {
            $e.par_iter()
        }
        #[cfg(not(feature = "parallel"))]
        {
            $e.iter()
        }
    }};
}

pub(crate) use par_iter;
