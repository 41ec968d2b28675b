#![no_std]

extern crate alloc;

pub mod dist;
pub mod error;
pub mod ivqr;
pub mod linalg;
pub mod model;
pub mod qr_solver;
pub mod ranktest;
pub mod sim;
pub mod spline;

pub use error::{DesignBlock, Error, Result};
pub use ivqr::{estimate, CovarianceBundle, IvqrConfig, IvqrEstimate};
pub use model::{AssembledDesign, Dataset};
pub use qr_solver::{solve_qr, CheckLossProblem, QrFit};
pub use ranktest::RankScoreResult;
pub use spline::SplineBasis;
