//! Objective layer: distortion, Lagrangian cost, per-point per-model
//! costs, and free energy for both network settings.

mod breakdown;
mod distributed;
mod side_info;

pub use breakdown::CostBreakdown;
pub use distributed::{
    lagrangian_distributed, DistributedProblem, DistributedSystem, GammaFn, Objective,
};
pub(crate) use distributed::route_cost_tables;
pub use side_info::{
    lagrangian_side_info, pointwise_cost_side_info, side_info_cost_tables, SideInfoProblem,
    SideInfoSystem,
};

use ndarray::Array2;

use crate::prob_model::{Grid, NoiseModel};

/// Expectation over the noise of a tabulated function of (y, x_i):
/// Σ_n w_N(n) · u(g + n, i), with u read by linear interpolation along y.
#[inline]
pub(crate) fn noise_average(
    u: &Array2<f64>,
    col: usize,
    y_grid: &Grid,
    noise: &NoiseModel,
    g: f64,
) -> f64 {
    let mut acc = 0.0;
    for (&n, &wn) in noise.grid.points().iter().zip(&noise.weights) {
        let (m, t) = y_grid.locate(g + n);
        acc += wn * ((1.0 - t) * u[(m, col)] + t * u[(m + 1, col)]);
    }
    acc
}
