pub mod diffmat;
pub mod error;
pub mod eval;
pub mod fmap;
pub mod geom;
pub mod gradcheck;
pub mod loss;
pub mod net;
pub mod train;

pub use error::{Error, Result};
