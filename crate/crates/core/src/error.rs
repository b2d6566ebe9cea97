use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("joint {joint} axis {axis}: angle {angle} outside [{min}, {max}]")]
    AngleOutOfLimits { joint: usize, axis: usize, angle: f64, min: f64, max: f64 },
    #[error("joints outside the crop cube: {joints:?}")]
    OutOfCube { joints: Vec<usize> },
    #[error("crop window does not intersect the depth frame")]
    EmptyCrop,
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    Shape { context: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("cannot build layer {layer}: {reason}")]
    Construction { layer: String, reason: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("no labeled real samples available for {0}")]
    EmptyLabeledSet(&'static str),
    #[error("unknown training phase {0}")]
    UnknownPhase(u8),
    #[error("training diverged in phase {phase} at iteration {iteration}")]
    Diverged { phase: u8, iteration: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
