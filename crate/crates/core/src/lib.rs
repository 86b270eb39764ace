//! Contextual-consistency corpus synthesis, consistency losses with analytic
//! gradients, and background/corruption robustness benchmarks.

pub mod annotation;
pub mod augment;
pub mod background;
pub mod bench;
pub mod corpus;
pub mod eval;
pub mod features;
pub mod fixture;
pub mod geometry;
pub mod loss;
pub mod prompts;
pub mod provenance;
pub mod raster;
pub mod replace;
pub mod seed;
pub mod select;
