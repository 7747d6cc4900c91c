//! Tensor-parallel decoding on simulated devices.
//!
//! Each device gets physical copies of the weight slices and cache columns
//! its sharding rule assigns, runs absorbed decoding on them, and reports
//! which cache elements it read. Head shards are gathered; MLRA branch
//! shards are summed and scaled by α_attn.

pub mod ledger;
pub mod plan;
pub mod shard;
pub mod sim;

pub use ledger::{loading_matrix_csv, DeviceTraffic, Replicated, TrafficLedger};
pub use plan::{check_support, observed_reduction, plan_devices, reduction_rule, shardable_axis, small_tp_config, BlockSpec, DevicePlan, ReductionKind};
pub use shard::{make_shards, DeviceShard, DeviceShards, OwnedBlock, ShardWeights};
pub use sim::{sim_decode, sim_decode_with, SimOutput};
