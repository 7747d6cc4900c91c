//! Exact evaluation of the parameter, KV cache and per-device loading table
//! and the decoding arithmetic intensity table, plus a roofline decode-time
//! estimator. All table arithmetic is in exact rationals; floats appear only
//! when a roofline time is printed.

pub mod intensity;
pub mod loading;
pub mod params;
pub mod placement;
pub mod rational;
pub mod report;
pub mod roofline;

pub use intensity::{arithmetic_intensity, asymptotic_intensity, device_flops, table_degree, Intensity};
pub use loading::{load_in_dh, per_device_load, sharding_floor, TP_DEGREES};
pub use params::{kv_cache_per_token, model_params, param_count, table_param_formula};
pub use placement::{placement, Placement};
pub use rational::{fmt_q, q, to_f64, Q};
pub use report::{cost_report, intensity_csv, loading_csv, table_reports, Context, CostReport};
pub use roofline::{decode_workload, roofline_decode_time, HardwareModel, Regime, RooflineTime, Workload};
