// SPDX-License-Identifier: Apache-2.0

//! One-round unbalanced circuit PSI.
//!
//! The client cuckoo-hashes its set into bins, encodes every slot as a
//! constant-weight codeword and sends the bit planes encrypted. The server
//! simple-hashes its (much larger) set once, keeps the bit planes in the
//! clear, and evaluates the arithmetic equality operator against every
//! server slot of every bin. Variants then fold the per-slot indicators
//! into labels, sums, inner products or a single masked scalar.
//!
//! Module map:
//!
//! - [`cwcode`]: code parameters, element↔codeword mapping, equality circuit.
//! - [`binning`]: cuckoo and simple hashing with permutation-based hashing.
//! - [`backend`]: batched arithmetic trait and the cleartext reference backend.
//! - [`protocol`]: preprocessing, server computation, result extraction.
//! - [`variants`]: labelled PSI, PSI-Sum/Cardinality, inner product, kth-match.
//! - [`planner`]: bitlength selection, Hamming-weight optimization, cost model.
//! - [`wire`], [`net`], [`cache`], [`config`], [`ingest`]: messages, transport
//!   and files.

pub mod backend;
pub mod binning;
pub mod cache;
pub mod config;
pub mod cwcode;
pub mod error;
pub mod ingest;
pub mod modulus;
pub mod net;
pub mod planner;
pub mod protocol;
pub mod variants;
pub mod wire;

pub use backend::{HeParams, ModulusProfile, OpCounts, ReferenceBackend, SimdBackend, SimdVector};
pub use binning::{BinTable, BinningPlan, ClientSlot, ServerSlot};
pub use config::PlanFile;
pub use cwcode::{CodeParams, Codeword, LossyHasher};
pub use error::{Error, Result};
pub use modulus::Modulus;
pub use planner::{CostModel, PlanResult};
pub use protocol::{PsiParams, ServerDataset};
pub use variants::Variant;
pub use wire::{Request, Response};
