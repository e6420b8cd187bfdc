pub mod binfmt;
pub mod embedding;
pub mod loss;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod teacher;
pub mod tournament;
