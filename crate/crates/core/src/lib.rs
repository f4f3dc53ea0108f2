//! Grid-based trajectory location privacy.
//!
//! The pipeline releases a perturbed location at each trajectory step while
//! tracking what a Bayesian attacker can infer:
//!
//! 1. propagate the attacker-visible belief through a mobility model
//!    ([`mobility`]),
//! 2. keep the smallest cell set covering `1 - delta` of the belief and stand
//!    in a surrogate when the true cell falls outside it ([`mobility`]),
//! 3. search Hilbert-curve windows for the minimum-diameter protection set
//!    whose prior-weighted guessing error clears `e^eps * E_m` ([`pls`]),
//! 4. perturb the location with permute-and-flip (or the closed-form /
//!    exponential-mechanism variants) scaled by the set diameter
//!    ([`perturb`]),
//! 5. run the Bayes attacker and score privacy and QoS loss in km
//!    ([`adversary`], [`metrics`]).
//!
//! [`scenario`] and [`pipeline`] wrap this in a configurable, seeded,
//! CSV-emitting experiment harness; the `trajpriv` binary exposes it on the
//! command line.

pub mod adversary;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod mobility;
pub mod perturb;
pub mod pipeline;
pub mod pls;
pub mod scenario;

pub use error::{Error, Result};
pub use grid::{CellId, GridMap, HilbertOrdering, Rotation};
pub use mobility::{BeliefRole, BeliefVector, DeltaLocationSet, TransitionMatrix};
pub use perturb::{MechanismFamily, MechanismKind, PerturbationDistribution, PerturbationModel};
pub use pipeline::{RunSettings, Scenario};
pub use pls::{PrivacyParams, ProtectionLocationSet};
pub use scenario::ScenarioConfig;
