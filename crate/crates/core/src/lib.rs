pub mod action;
pub mod camera;
pub mod cond;
pub mod numeric;
pub mod refs;
pub mod rng;
pub mod sampler;
pub mod script;
pub mod pipeline;
pub mod cli;
