//! End-to-end stages and their file formats: simulation, odometry,
//! reconstruction and evaluation.

pub mod config;
pub mod eval;
pub mod io;
pub mod odometry;
pub mod reconstruct;
pub mod simulate;

pub use config::RunConfig;
pub use eval::{compute_ate, efficiency_factors, EfficiencyFactors};
pub use io::{Dataset, TrajectoryEstimate};
pub use odometry::{run_odometry, write_odometry, OdometryResult, ScanSource};
pub use reconstruct::{load_odometry_output, run_reconstruction, write_mesh};
pub use simulate::{simulate, write_dataset, SimulatedDataset};
