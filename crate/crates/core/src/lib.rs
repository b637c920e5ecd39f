//! Distributed event-based state estimation: LMI synthesis of observer gains
//! and event-trigger thresholds, an embedded SDP solver, and a closed-loop
//! broadcast-bus simulator.

pub mod error;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod sdp;
pub mod serde_mat;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};
pub use linalg::Mat;
