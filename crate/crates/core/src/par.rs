//! Parallel iteration shim.
//!
//! With the `parallel` feature (default) this re-exports the rayon traits,
//! so `.par_iter()` and friends fan out across the thread pool. Without it
//! the same method names resolve to plain sequential iterators, keeping
//! every call site identical across both builds.
//!
//! Call sites that feed reports must stay deterministic: parallel maps
//! collect into `Vec`s in index order and any floating-point reduction
//! happens sequentially afterwards.

#[cfg(feature = "parallel")]
pub(crate) mod prelude {
    pub(crate) use rayon::prelude::*;
}

#[cfg(not(feature = "parallel"))]
pub(crate) mod prelude {
    //! Sequential stand-ins mirroring the rayon method names we use.

    pub(crate) trait SeqSlice<T> {
        fn par_iter(&self) -> std::slice::Iter<'_, T>;
    }

    impl<T> SeqSlice<T> for [T] {
        fn par_iter(&self) -> std::slice::Iter<'_, T> {
            self.iter()
        }
    }
}
