//! Numerical laboratory for the random-walk pinning model.
//!
//! A simple random walk `X` on `Z^d` is rewarded (or penalised) for the time it
//! spends on top of an independent walk `Y`, the disorder. The crate evaluates
//! quenched and annealed partition functions by several independent routes,
//! locates annealed critical points, and implements the fractional-moment and
//! change-of-measure tooling used to compare the two.

pub mod annealed;
pub mod disorder;
pub mod error;
pub mod fracmom;
pub mod kernels;
pub mod pam_polymer;
pub mod quenched;
pub mod renewal;
pub mod rng;
pub mod special;
pub mod stats;

pub use error::{PinError, Result};
pub use stats::McEstimate;

/// Time discretisation of both walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Discrete,
    Continuous,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Discrete => "discrete",
            Mode::Continuous => "continuous",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = PinError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discrete" => Ok(Mode::Discrete),
            "continuous" => Ok(Mode::Continuous),
            other => Err(PinError::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}
