pub mod analysis;
pub mod cli;
pub mod coattention;
pub mod data;
pub mod diagnostics;
pub mod encoders;
pub mod ensemble;
pub mod fusion;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;
