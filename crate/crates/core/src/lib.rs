//! Shared substrate for the attnkit crates: dense tensors, seeded
//! randomness, attention configuration, weight sets and the KV cache.

pub mod cache;
pub mod config;
pub mod error;
pub mod rng;
pub mod tensor;
pub mod weights;

pub use cache::{cache_layout, CacheLayout, CacheReader, KvCache, Segment};
pub use config::{AttnConfig, Variant, TABLE_LABELS};
pub use error::{AttnError, Result};
pub use rng::Rng;
pub use tensor::Tensor;
pub use weights::{build_weights, build_weights_with, WeightInit, WeightKind, WeightName, WeightSet, WeightSource};
