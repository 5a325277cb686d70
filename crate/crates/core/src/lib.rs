pub mod adversary;
pub mod attackers;
pub mod audit;
pub mod container;
pub mod diffusion;
pub mod dp;
pub mod error;
pub mod explain;
pub mod gnn;
pub mod graphgen;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
