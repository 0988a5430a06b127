//! AMR-to-text generation as reverse cache-transition parsing.
//!
//! A graph is turned into text by running a cache transition parser
//! backwards: concepts are pushed from a buffer through a fixed-size cache
//! and popped again, and English words are generated alongside those
//! actions. [`oracle`] extracts gold action traces from aligned examples,
//! [`conditioned`] and [`joint`] are the two decoders, and [`eval`] scores
//! their output.

pub mod amr;
pub mod corpus;
pub mod transition;
pub mod oracle;
pub mod neural;
pub mod model;
pub mod encoder;
pub mod decode;
pub mod conditioned;
pub mod joint;
pub mod train;
pub mod eval;
pub mod synth;
