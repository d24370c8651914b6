//! Deep probabilistic graphical modeling on a small reverse-mode autodiff
//! core.

pub mod error;
pub mod etm;
pub mod experiments;
pub mod expfam;
pub mod hmc;
pub mod linalg;
pub mod models;
pub mod presgan;
pub mod rem;
pub mod vi;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Tensor, Tape, Var};
