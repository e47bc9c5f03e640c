pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod energy;
pub mod gnn;
pub mod integrator;
pub mod mesh;
pub mod optim;
pub mod train;
