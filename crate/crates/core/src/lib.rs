//! Hard negative mining for region-based detectors, with FDDB-style
//! discrete and continuous ROC evaluation and a small reference detector
//! that runs the whole loop on synthetic scenes.

pub mod annotations;
pub mod cli;
pub mod evaluator;
pub mod geometry;
pub mod miner;
pub mod refdet;
pub mod sampler;
