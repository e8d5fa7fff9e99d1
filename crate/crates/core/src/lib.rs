pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod flops;
pub mod grapher;
pub mod layers;
pub mod lrgc;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;
pub mod verify;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamKind, ParamStore};
pub use tensor::{Element, Tensor};
