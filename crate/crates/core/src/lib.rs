//! Heterogeneous PL/AIE partitioning and mixed-precision DRL training.

pub mod cost;
pub mod graph;
pub mod partition;
pub mod numerics;
pub mod train;
