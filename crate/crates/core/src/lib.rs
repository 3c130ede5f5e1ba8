// Negated comparisons are the NaN-rejecting form of the argument checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod expm;
pub mod grid;
pub mod hardy;
pub mod kernel;
pub mod montecarlo;
pub mod perturbation;
mod quad;
pub mod stable;
pub mod verify;

pub use error::{Error, Result};

/// Sets the worker count for path simulation, sweeps and dense linear algebra.
///
/// Must be called before any parallel work starts; later calls only affect the
/// linear algebra.
pub fn configure_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(error::domain("thread count must be positive"));
    }
    faer::set_global_parallelism(if threads == 1 {
        faer::Par::Seq
    } else {
        faer::Par::rayon(threads)
    });
    // An already initialized pool keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}
