//! Provably nearest counterfactual explanations for ReLU feed-forward binary classifiers.
//!
//! The network, bounds tables, encoded points and distances are generic over [`Scalar`];
//! the MILP layer and everything built on it work in `f64`. The aliases below fix the
//! scalar for the common case.

pub mod bounds;
pub mod encoder;
pub mod features;
pub mod milp;
pub mod network;
pub mod oracle;
pub mod scalar;
pub mod search;

pub use scalar::Scalar;

pub type Network = network::FeedForwardNetwork<f64>;
pub type EncodedPoint = features::EncodedPoint<f64>;
pub type InputBox = bounds::InputBox<f64>;
pub type BoundsTable = bounds::BoundsTable<f64>;

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Network(#[from] network::NetworkError),
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Bounds(#[from] bounds::BoundsError),
    #[error(transparent)]
    Solver(#[from] milp::SolverError),
    #[error(transparent)]
    Encode(#[from] encoder::EncodeError),
    #[error(transparent)]
    Search(#[from] search::SearchError),
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
}
