pub mod env;
pub mod grad;
pub mod ode;
pub mod policy;
pub mod rng;
pub mod train;
