//! One decode step across every device of a shard group.

use attnkit_core::{AttnError, Result, Tensor};
use attnkit_decode::{device_step, reduce_units, Mode, StepOutput, UnitOutput};

use crate::ledger::{build_ledger, TrafficLedger};
use crate::shard::{DeviceShard, DeviceShards};

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    /// `[h × head_out_dim]`.
    pub o: Tensor,
    pub ledger: TrafficLedger,
}

/// Absorbed decode of `h_t` on every device, one thread.
pub fn sim_decode(shards: &mut DeviceShards, h_t: &[f64]) -> Result<SimOutput> {
    sim_decode_with(shards, h_t, Mode::Absorbed, 1)
}

/// Every device appends the token to its cache shard and runs its units;
/// unit outputs are gathered in device-id order and reduced. The reduction
/// sums each head's branches in ascending branch order whatever device they
/// came from, so the result does not depend on `threads` or on φ.
pub fn sim_decode_with(shards: &mut DeviceShards, h_t: &[f64], mode: Mode, threads: usize) -> Result<SimOutput> {
    let cfg = shards.cfg.clone();
    let run = |dev: &mut DeviceShard| {
        let DeviceShard { weights, cache, units, .. } = dev;
        device_step(&cfg, weights, cache, h_t, units, mode)
    };
    let steps: Vec<Result<StepOutput>> = if threads <= 1 || shards.devices.len() == 1 {
        shards.devices.iter_mut().map(run).collect()
    } else {
        let chunk = shards.devices.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = shards
                .devices
                .chunks_mut(chunk)
                .map(|c| s.spawn(|| c.iter_mut().map(run).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().unwrap_or_else(|_| vec![Err(AttnError::Integrity("device thread panicked".into()))]))
                .collect()
        })
    };
    let steps: Vec<StepOutput> = steps.into_iter().collect::<Result<_>>()?;
    let gathered: Vec<UnitOutput> = steps.iter().flat_map(|s| s.units.iter().cloned()).collect();
    let heads: Vec<usize> = (0..cfg.h).collect();
    let o = reduce_units(&cfg, &gathered, &heads)?;
    let ledger = build_ledger(shards, &steps)?;
    Ok(SimOutput { o, ledger })
}
