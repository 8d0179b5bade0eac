//! Geometric Lorenz flow with a concrete return map, and a constructive
//! search for initial states whose time averages fail to converge.

pub mod averaging;
pub mod bigreal;
pub mod error;
pub mod geometry;
pub mod map1d;
pub mod semiflow;
pub mod witness;

pub use bigreal::{BigInterval, BigReal};
pub use error::{Error, Result};
pub use geometry::{BoxSpec, SigmaPoint};
pub use map1d::{Branch, Itinerary, MapParams};
pub use semiflow::{FlowParams, HybridOrbit, Model, State3};
pub use witness::{Mode, WitnessCertificate, WitnessRequest};
