//! Dense matrices with a reverse-mode differentiation tape.

pub mod linalg;
mod mat;
mod tape;

pub use mat::Mat;
pub use tape::{GradMap, NodeId, Tape, DISTANCE_FLOOR};

#[cfg(test)]
mod tests;
