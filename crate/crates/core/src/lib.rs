//! Bounds, point identification and variance analysis for the probabilities
//! of causation (PN, PS, PNS) from stratified contingency data.
//!
//! * [`model`]: count ingestion, stratified joints and experimental quantities
//! * [`bounds`]: conditional, stratified and Tian–Pearl bounds
//! * [`identify`]: monotonicity point estimates and asymptotic variances
//! * [`covselect`]: conditional-independence checks and stratifier comparison
//! * [`simulate`]: seeded Monte Carlo replication
//! * [`oracle`]: response-type polytope search used to verify the bounds
//! * [`cli`]: the `probcause` command line

pub mod bounds;
pub mod cli;
pub mod covselect;
pub mod error;
pub mod identify;
pub mod model;
pub mod oracle;
pub mod simulate;

pub use error::{Error, Result};
