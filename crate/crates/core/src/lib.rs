pub mod adaptation;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod model;
pub mod params;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod training;

pub use error::{Error, Result};
pub use params::{Bound, ParamStore};
pub use rng::SeedRng;
pub use tensor::{Graph, Tensor, Var};
