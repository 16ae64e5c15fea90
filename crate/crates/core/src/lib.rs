//! Variety-aware produce grading.
//!
//! The crate is organised around a per-variety parameter dictionary
//! ([`rgid`]) that every other stage reads: feature extraction
//! ([`features`]), cascaded grading with early exit ([`cascade`]), data
//! shelf life ([`lifecycle`]), the trust index ([`metrics`]), the feedback
//! loop ([`feedback`]), consumer-facing credentials ([`premap`]) and a
//! deterministic simulator tying them together ([`simgen`]).
//!
//! ```
//! use trialign::{default_repository, rgid::VarietyId};
//!
//! let repo = default_repository().unwrap();
//! let pear = repo.lookup(&"xinjiang/korla-pear".parse::<VarietyId>().unwrap()).unwrap();
//! assert_eq!(pear.phi.len(), pear.omega.len());
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x >= 0.0)` also rejects NaN

pub mod cascade;
pub mod cli;
pub mod error;
pub mod evalstats;
pub mod features;
pub mod feedback;
pub mod lifecycle;
pub mod metrics;
pub mod premap;
pub mod rgid;
pub mod simgen;

pub use error::{Error, Result};

/// The dictionary shipped in `data/dictionary.toml`.
pub const DEFAULT_DICTIONARY: &str = include_str!("../data/dictionary.toml");

pub fn default_repository() -> Result<rgid::Repository> {
    rgid::load_dictionary(DEFAULT_DICTIONARY)
}
