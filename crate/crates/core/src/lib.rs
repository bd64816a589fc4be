pub mod activations;
pub mod augment;
pub mod cli;
pub mod forward;
pub mod linalg;
pub mod rng;
pub mod spectrum;
pub mod storage;
pub mod synthetic;
