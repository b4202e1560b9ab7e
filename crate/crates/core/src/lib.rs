pub mod assess;
pub mod benchmark;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod signal;
pub mod synth;
pub mod train;
