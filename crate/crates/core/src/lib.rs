mod error;
pub use error::{Error, Result};

pub mod depthmap;
pub mod frame;
pub mod grid;
pub mod synthgel;
pub mod stagekin;
pub mod markers;
pub mod shear;
pub mod actuation;
pub mod pipeline;
pub mod stream;
