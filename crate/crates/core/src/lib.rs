pub mod augment;
pub mod corpus;
pub mod digest;
pub mod eval;
pub mod error;
pub mod ntm;
pub mod ot;
pub mod scalar;
pub mod synthetic;
pub mod topical;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Embeddings = corpus::EmbeddingTable<f64>;
pub type Params = ntm::NtmParams<f64>;
pub type Plan = ot::TransportPlan<f64>;
pub type Cost = ot::CostMatrix<f64>;
pub type Distribution = ot::DiscreteDistribution<f64>;
pub type Topics = topical::TopicSet<f64>;
