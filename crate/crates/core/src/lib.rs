//! Slow-time adaptive statistical analog beamforming for wideband
//! single-carrier massive MIMO uplinks.
//!
//! The crate covers the full simulation chain: scenario definition, channel
//! covariance construction and angular mobility, angular patching with
//! incremental (Woodbury) inverse maintenance, the analog beamformer family
//! (generalized eigen-beamformer and its filtered, Wiener-type and
//! whitening-type adaptations), the reduced-dimension receiver, channel
//! estimation, closed-form performance measures and a slow-time runner.

pub mod analytics;
pub mod beamformer;
pub mod channel;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod patch;
pub mod receiver;
pub mod runner;
pub mod scenario;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, HermitianMatrix};
pub use scenario::{default_table1_scenario, load_scenario, small_preset, ScenarioConfig};
