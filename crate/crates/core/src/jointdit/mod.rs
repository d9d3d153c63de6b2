//! Toy joint video-pose diffusion transformer.

pub mod autodiff;
pub mod layout;
pub mod rope;
pub mod model;
pub mod train;
pub mod checkpoint;
