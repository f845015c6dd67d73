//! Rate splitting with linear beamforming for arbitrary multicast demands over
//! a multi-carrier MISO downlink.
//!
//! The crate covers the message-partition and layer algebra ([`groupcast`]),
//! seeded channel generation ([`channel`]), the joint-decoding rate region
//! ([`region`]), an interior-point solver for the convexified subproblems
//! ([`kernel`]), the concave-convex outer loop ([`cccp`]), comparison schemes
//! ([`baselines`]) and the experiment driver ([`harness`]).

pub mod baselines;
pub mod cccp;
pub mod channel;
pub mod complex;
pub mod error;
pub mod groupcast;
pub mod harness;
pub mod kernel;
pub mod lp;
pub mod region;
pub mod userset;

pub use error::{Error, Result};
pub use groupcast::{
    assemble_rates, build_layers, compute_partition, Demands, LayerScheme, LayerStructure, MessagePartition,
    RateAllocation,
};
pub use userset::UserSet;
