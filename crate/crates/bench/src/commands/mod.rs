pub mod eigs;
pub mod gradcheck;
pub mod instability;
pub mod pareto;
pub mod train;
