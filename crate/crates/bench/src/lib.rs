//! Shared inputs for the criterion benches.

use exitbound::bench::{draw_matrices, fixtures, Fixture, RngSeed};
use exitbound::geometry::EnclosureMode;
use exitbound::linalg::SquareMatrix;
use exitbound::Result;

/// `count` stable matrices of dimension `n` and the two box fixtures.
pub fn workload(count: usize, n: usize, seed: u64) -> Result<(Vec<SquareMatrix>, [Fixture; 2])> {
    Ok((draw_matrices(count, n, RngSeed(seed))?, fixtures(n, EnclosureMode::Ball)?))
}
