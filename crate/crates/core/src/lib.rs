pub mod ensemble;
pub mod metrics;
pub mod nnengine;
pub mod persist;
pub mod quantifiers;
pub mod rng;
