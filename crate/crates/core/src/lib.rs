//! Expansion, exploration and exploitation over fingerprint spaces.

pub mod acquisition;
pub mod agni;
pub mod candidates;
pub mod config;
pub mod crystal;
pub mod designs;
pub mod error;
pub mod expansion;
pub mod fingerprint;
pub mod harness;
pub mod ledger;
pub mod oracle;
pub mod problems;
pub mod rng;
pub mod setgeom;
pub mod surrogate;
pub mod xyz;

pub use candidates::{CandidateSet, Entry};
pub use error::{Error, Result};
pub use fingerprint::{euclidean, Fingerprint};
pub use ledger::{EnergyLedger, LedgerRecord, Phase};
pub use oracle::{CountingOracle, EnergyOracle};
pub use rng::{Stream, Streams};
