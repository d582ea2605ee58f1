//! Optimal training data and supervised imitation.

mod database;
mod pmp;
mod shooting;
mod train;

pub use database::{
    build_database, meta_path, Bounds, Database, DatabaseError, DatabaseMeta, DatabaseOptions, SaturationStats,
    CSV_HEADER,
};
pub use pmp::{augmented_rhs, hamiltonian, pmp_control, running_cost};
pub use shooting::{
    hover_guess, shooting_residual, solve_tpbvp, InitialGuess, OptimalTrajectory, ShootingError, ShootingGuess,
    ShootingOptions,
};
pub use train::{
    fit_input_map, init_net, loss_and_gradient, parameters, set_parameters, train, write_metrics_csv,
    EpochMetrics, TrainError, TrainOptions, TrainReport,
};
