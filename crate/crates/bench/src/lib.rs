//! Fixtures shared by the benchmarks.

use prosac_core::{AnalyticOracle, Axis, Coupling, HyperGrid, Surface};

/// A `side` x `side` grid on the unit square.
pub fn square_grid(side: usize) -> HyperGrid {
    let values: Vec<f64> = (0..side)
        .map(|i| i as f64 / (side - 1).max(1) as f64)
        .collect();
    HyperGrid::new(vec![Axis::new("a", values.clone()), Axis::new("b", values)])
        .expect("valid grid")
}

/// Smooth bump risk surface peaking below the usual alpha.
pub fn bump_oracle(grid: &HyperGrid, n: u64) -> AnalyticOracle {
    let surface = Surface::Bump {
        base: 0.01,
        peak: 0.06,
        center: vec![0.5, 0.5],
        width: 0.3,
    };
    AnalyticOracle::new(grid.clone(), &surface, n, Coupling::Shared).expect("valid surface")
}
