pub mod data;
pub mod detection;
pub mod downweight;
pub mod error;
pub mod harness;
pub mod mcmc;
pub mod marglik;
pub mod model;
pub mod quadrature;
pub mod simgen;
