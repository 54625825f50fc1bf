//! Preselected macroscopic singlets of amplified photon pairs: amplitudes,
//! preselection, coarse-grained intensity observables and CHSH statistics.
pub mod error;
pub mod numerics;
pub use error::{Error, Result};
pub mod belltest;
pub mod cache;
pub mod macrostate;
pub mod measure;
pub mod oracle;
pub mod preselect;
