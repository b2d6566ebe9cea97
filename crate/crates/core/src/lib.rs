#![no_std]
extern crate alloc;

pub mod autodiff;
pub mod gradcheck;
pub mod params;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod depth;
pub mod error;
pub mod optim;
pub mod posekit;
pub mod synthgen;
pub mod models;
pub mod losses;
pub mod trainer;
pub mod eval;
