use thiserror::Error;

use crate::map1d::Branch;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The map is undefined on x = 0.
    #[error("domain error: x = 0 lies on the stable manifold")]
    Domain,

    #[error("range error: {value:e} is outside the image of the {branch} branch")]
    Range { value: f64, branch: Branch },

    #[error("orbit reaches 0 at step {step}")]
    StableManifold { step: usize },

    #[error("orbit hits x = 0 on the section at t = {time}")]
    GammaHit { time: f64 },

    #[error("slab exit: |x| = {reached:e} exceeds 0.1")]
    SlabExit { reached: f64 },

    #[error("no preimage found up to depth {n_max}")]
    PreimageNotFound { n_max: usize },

    #[error("precision exhausted: {required} bits required (cap {cap}), achieved {achieved}")]
    PrecisionExhausted { required: u64, cap: u64, achieved: usize },

    #[error("degenerate interval: {0}")]
    Degenerate(String),

    #[error("t = {t} is beyond the orbit horizon {horizon}")]
    Horizon { t: f64, horizon: f64 },

    #[error("event index {index} out of range ({len} events)")]
    EventIndex { index: usize, len: usize },

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("parse error: {0}")]
    Parse(String),
}
