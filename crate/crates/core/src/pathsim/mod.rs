//! Time grids, Brownian increment streams, the exponential-Euler integrator
//! and the Picard reference solver.

mod grid;
mod integrate;
mod noise;
mod picard;

pub use grid::{make_grid, GridSpec};
pub use integrate::{integrate_mild, integrate_shifted, segment_at, Trajectory};
pub use noise::{sample_noise, sample_noise_refined, NoiseBundle};
pub use picard::{picard_reference, PicardResult};

pub(crate) use integrate::decay_factors;
