//! Principal eigenvalues of controlled, killed diffusions on boxes: grid
//! discretization, policy iteration, Q-processes, occupation-measure linear
//! programs and Monte Carlo checks.

pub mod control;
pub mod discretize;
pub mod eigen;
pub mod linalg;
pub mod mc;
pub mod problem;
pub mod qprocess;
pub mod variational;
pub mod verify;
