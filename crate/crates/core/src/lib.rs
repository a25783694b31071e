mod error;

pub mod cascade;
pub mod checkpoint;
pub mod fog;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod prior;
pub mod train;

pub use error::{Error, Result};
pub use pgcycle_autograd as autograd;
