//! Skeletal animation from multi-view pose maps.

pub mod camera;
pub mod datakit;
pub mod error;
pub mod io;
pub mod jointdit;
pub mod kinematics;
pub mod pipeline;
pub mod posemap;
pub mod reconstruct;
pub mod skeleton;

pub use error::{Error, ErrorClass, Result};
