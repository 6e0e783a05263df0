//! Fixed benchmark inputs shared by the criterion benches.

use rcr::bench::{generate_clique_chain, generate_grid, GridSpec};
use rcr::FactorGraph;

pub const GRID_SEED: u64 = 17;

/// Square Ising grid with default strengths.
pub fn grid(side: usize) -> FactorGraph {
    generate_grid(&GridSpec::new(side, side, GRID_SEED))
}

/// Bounded-treewidth stand-in: 201 binary variables, cliques of at most four.
pub fn clique_chain() -> FactorGraph {
    generate_clique_chain(201, 4, 6, 1.0, GRID_SEED)
}
