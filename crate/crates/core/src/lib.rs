pub mod cli;
pub mod error;
pub mod matcore;
pub mod metrics;
pub mod shrinkage;
pub mod simlab;
pub mod solvers;
