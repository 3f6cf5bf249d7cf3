//! Desk-scale toolkit for multiresolution analysis under Zygmund dilations
//! (x1, x2, x3) -> (d1 x1, d2 x2, d1 d2 x3) on the periodic unit cube.
//!
//! Everything lives on finite dyadic grids so that the structural identities
//! of the theory (martingale expansions, shift decompositions, paraproduct
//! identities, telescoping ladders) hold to machine precision, while the
//! inequalities (coefficient decay, sparse domination, commutator bounds)
//! are exercised as reported empirical constants.

pub mod analysis;
pub mod bmo;
pub mod decompose;
pub mod error;
pub mod fixtures;
pub mod forms;
pub mod grid;
pub mod haar;
pub mod kernels;
pub mod lattice;
pub mod report;
pub mod shifts;

pub use error::{Error, Result};
pub use grid::{GridFunction, GridSpec};
pub use lattice::{Axis, DyadicInterval, Lattice, LatticeShift, Rect3, ZygRect};

/// Build a rayon thread pool honoring the ZMRA_THREADS cap, if set.
/// Returns the configured number of threads.
pub fn configure_threads() -> usize {
    if let Ok(v) = std::env::var("ZMRA_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                // ignore failure when a global pool already exists
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                return n;
            }
        }
    }
    rayon::current_num_threads()
}
