//! Deterministic simulator and joint optimizer for RIS-assisted LEO
//! satellite sub-THz downlinks.

pub mod association;
pub mod bcd;
pub mod channel;
pub mod cli;
pub mod geometry;
pub mod learnkit;
pub mod link;
pub mod mappo;
pub mod netsim;
pub mod output;
pub mod rng;
pub mod scenario;
pub mod sweep;
pub mod woa;
pub mod world;
