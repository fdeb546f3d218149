pub mod discretization;
pub mod error;
pub mod export;
pub mod kernelcore;
pub mod operators;
pub mod quadrature;
pub mod solvers;
pub mod verify;
