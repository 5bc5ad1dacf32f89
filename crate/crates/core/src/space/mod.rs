//! Geometry, point patterns and pattern metrics.

mod assignment;
mod geometry;
mod grid;
mod pattern;

pub use assignment::{d1_distance, d1_distance_limited, matching_cost, solve_assignment, DEFAULT_D1_LIMIT};
pub use geometry::{
    ball_volume, ball_volume_mc, integrate_over_shell, intersection_ball_volume, union_ball_volume, union_ball_volume_mc, Norm,
    Window, DEFAULT_MC_SAMPLES,
};
pub use grid::CellGrid;
pub use pattern::{contract, pair_count, BoundedMetric, PointPattern};
