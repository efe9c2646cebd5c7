pub mod baiperron;
pub mod data;
pub mod design;
pub mod dols;
pub mod error;
pub mod io;
pub mod metrics;
pub mod montecarlo;
pub mod ols;
pub mod sim;
pub mod solver;
pub mod stage1;
pub mod stage2;

pub use data::TimeSeriesData;
pub use design::{CoefficientPath, ThetaVector};
pub use error::{Error, Result};
pub use ols::{segment_ols, BreakModel};
