//! Rate-maximizing designs for a two-hop MIMO amplify-and-forward relay that
//! powers itself by time-switching energy harvesting.
//!
//! * [`fixed`] solves relay matrix and TS ratio in closed form for a uniform
//!   source covariance.
//! * [`joint`] adds the source covariance and alternates between two convex
//!   blocks.
//! * [`oracle`] holds brute-force grids and residual checks for both.
//! * [`sim`] runs Monte Carlo sweeps and writes CSV.

pub mod error;
pub mod fixed;
pub mod instance;
pub mod joint;
pub mod linalg;
pub mod model;
pub mod oracle;
mod roots;
pub mod sim;

pub use error::{Error, Result};
pub use fixed::solve_fixed_source;
pub use joint::{solve_joint, JointOptions};
pub use model::{
    eigen_profile, generate_channel, ChannelRealization, EigenProfile, FadingModel, NoiseDim,
    RelayDesign, Scheme, SolveReport, SystemParams,
};
