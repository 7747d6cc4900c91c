//! Single-token decoding against an append-only cache.
//!
//! Latent variants decode either naively, rebuilding per-head keys and values
//! from the cached latent, or with the up-projections absorbed into the
//! query and output. Every cache access goes through an instrumented reader
//! so per-step and per-lane traffic can be checked.

pub mod entries;
pub mod query;
pub mod step;
pub mod units;

pub use entries::{pieces, token_entries, Piece};
pub use query::{absorb_query, absorbed_queries, queries, AbsorbedQuery, HeadQuery};
pub use step::{absorbed_decode_step, decode_sequence, decode_step, device_step, naive_decode_step, DecodeOutput, StepOutput};
pub use units::{decode_units, reduce_units, units_for, Mode, Unit, UnitOutput};
