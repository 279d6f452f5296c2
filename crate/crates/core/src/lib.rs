pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod selection;
pub mod soup;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Adapter32 = model::AdapterWeights<f32>;
pub type Adapter64 = model::AdapterWeights<f64>;
