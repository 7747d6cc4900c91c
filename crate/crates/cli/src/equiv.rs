//! Naive against absorbed latent decoding on random instances.

use serde::Serialize;

use attnkit_core::{build_weights, AttnConfig, AttnError, Result, Rng, Tensor};
use attnkit_decode::{decode_sequence, Mode};

pub const EQUIV_TOL: f64 = 1e-10;
pub const EQUIV_VARIANTS: [&str; 4] = ["MLA", "GLA-2", "MLRA-2", "MLRA-4"];
pub const EQUIV_SIGMA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivReport {
    pub variant: String,
    pub trials: usize,
    pub first_seed: u64,
    pub max_rel_error: f64,
    pub worst_seed: u64,
    pub first_failing_seed: Option<u64>,
    pub tolerance: f64,
    pub pass: bool,
}

/// `max|naive − absorbed| / max|naive|` for one instance. The seed fixes the
/// weights, the token count (1 to 6), the position offset and the inputs.
pub fn equiv_trial(cfg: &AttnConfig, sigma_w: f64, seed: u64) -> Result<f64> {
    if !cfg.variant.is_latent() {
        return Err(AttnError::config(format!(
            "{} has no absorbed decode path; equiv takes MLA, GLA or MLRA",
            cfg.label()
        )));
    }
    let rng = Rng::new(seed);
    let mut shape = rng.fork("shape");
    let n = shape.below(1, 7);
    let offset = shape.below(0, 2048);
    let ws = build_weights(cfg, sigma_w, &rng.fork("w"))?;
    let h = Tensor::gaussian(&[n, cfg.d], 1.0, &mut rng.fork("h"));
    let (naive, _) = decode_sequence(cfg, &ws, &h, offset, Mode::Naive)?;
    let (absorbed, _) = decode_sequence(cfg, &ws, &h, offset, Mode::Absorbed)?;
    let scale = naive.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = naive.max_abs_diff(&absorbed)?;
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Trials use seeds `seed, seed + 1, …`, so any one replays alone with
/// `--seed s --trials 1`.
pub fn equiv_run(cfg: &AttnConfig, sigma_w: f64, seed: u64, trials: usize) -> Result<EquivReport> {
    if trials == 0 {
        return Err(AttnError::config("equiv needs at least one trial"));
    }
    let mut worst = (0.0f64, seed);
    let mut first_fail = None;
    for t in 0..trials as u64 {
        let s = seed.wrapping_add(t);
        let e = equiv_trial(cfg, sigma_w, s)?;
        if e.is_nan() || e > worst.0 {
            worst = (e, s);
        }
        if first_fail.is_none() && !(e <= EQUIV_TOL) {
            first_fail = Some(s);
        }
    }
    Ok(EquivReport {
        variant: cfg.label(),
        trials,
        first_seed: seed,
        max_rel_error: worst.0,
        worst_seed: worst.1,
        first_failing_seed: first_fail,
        tolerance: EQUIV_TOL,
        pass: first_fail.is_none(),
    })
}
