//! Passive gamma emission tomography reconstruction engine.
//!
//! Attenuated-Radon forward model with exact derivatives, a constrained
//! Levenberg-Marquardt trust-region solver, and safeguarded learned
//! acceleration (CNN / FNO / WNO inference).

pub mod accelerator;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod phantom;
pub mod safeguard;
pub mod solver;

pub use error::{Error, Result};
pub use forward::{ImagePair, Sinogram};
pub use geometry::{DetectorSpec, GridSpec, Mask, RayTables};
