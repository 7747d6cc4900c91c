//! Monte Carlo checks of the variance of latent-attention components under
//! i.i.d. Gaussian weights, before and after calibration.

pub mod parity;
pub mod report;
mod sample;
pub mod stats;

use attnkit_core::config::{AttnConfig, Variant};
use attnkit_core::{AttnError, Result, Rng};
use attnkit_latent::calib_factors;

pub use parity::{parity_config, PARITY_TOKENS};
pub use report::{rel_dev, Check, ComponentStat, VarianceReport, K_ROPE_BAND, PARITY_BAND, RATIO_BAND};
use sample::{Sampler, COMPONENTS};
use stats::{run_trials, sample_variance};

pub const MIN_TRIALS: usize = 10_000;

fn measure(cfg: &AttnConfig, sigma_w: f64, trials: usize, rng: &Rng, threads: usize) -> Result<(Vec<ComponentStat>, Vec<f64>)> {
    if trials < MIN_TRIALS {
        return Err(AttnError::config(format!("variance estimates need at least {MIN_TRIALS} trials, got {trials}")));
    }
    if !(sigma_w >= 0.0 && sigma_w.is_finite()) {
        return Err(AttnError::config(format!("sigma_w must be finite and >= 0, got {sigma_w}")));
    }
    cfg.validate()?;
    let sampler = Sampler::new(cfg, sigma_w)?;
    // a failed draw cannot happen once the sampler is built; keep the error path anyway
    let failed = std::sync::atomic::AtomicBool::new(false);
    let cols = run_trials(trials, threads, &rng.fork("components"), |r| {
        sampler.draw(r).unwrap_or_else(|_| {
            failed.store(true, std::sync::atomic::Ordering::Relaxed);
            [0.0; 5]
        })
    });
    if failed.into_inner() {
        return Err(AttnError::Numeric { op: "variance draw".into(), detail: "sampler failed".into() });
    }
    let vars: Vec<f64> = cols.iter().map(|c| sample_variance(c)).collect();
    let stats = COMPONENTS
        .iter()
        .zip(vars.iter().zip(sampler.predicted()))
        .map(|(name, (&v, p))| ComponentStat {
            component: (*name).to_string(),
            sample_variance: v,
            predicted_variance: p,
            relative_deviation: rel_dev(v, p),
        })
        .collect();
    Ok((stats, vars))
}

/// Branch and branch-sum output variances for MLRA; `None` otherwise.
fn parity(cfg: &AttnConfig, sigma_w: f64, trials: usize, rng: &Rng, threads: usize) -> Result<Option<[f64; 2]>> {
    if cfg.variant != Variant::Mlra {
        return Ok(None);
    }
    let small = parity_config(cfg)?;
    let failed = std::sync::atomic::AtomicBool::new(false);
    let [one, sum] = run_trials(trials, threads, &rng.fork("parity"), |r| {
        parity::draw(&small, sigma_w, r).unwrap_or_else(|_| {
            failed.store(true, std::sync::atomic::Ordering::Relaxed);
            [0.0; 2]
        })
    });
    if failed.into_inner() {
        return Err(AttnError::Numeric { op: "parity draw".into(), detail: "forward pass failed".into() });
    }
    Ok(Some([sample_variance(&one), sample_variance(&sum)]))
}

fn push_parity(cfg: &AttnConfig, p: Option<[f64; 2]>, comps: &mut Vec<ComponentStat>, checks: &mut Vec<Check>) {
    let Some([one, sum]) = p else { return };
    let alpha = calib_factors(cfg).alpha_attn.value();
    let predicted = cfg.branches as f64 * alpha * alpha * one;
    comps.push(ComponentStat {
        component: "O-branch-sum".into(),
        sample_variance: sum,
        predicted_variance: predicted,
        relative_deviation: rel_dev(sum, predicted),
    });
    let ratio = if one == 0.0 { 0.0 } else { sum / one };
    checks.push(Check::new(
        "Var(O-branch-sum)/Var(O-branch)",
        ratio,
        cfg.branches as f64 * alpha * alpha,
        PARITY_BAND,
    ));
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Sample variance of every component across fresh weight draws, with the
/// calibration state `cfg` carries, against the analytic predictions.
pub fn estimate_variances(cfg: &AttnConfig, sigma_w: f64, trials: usize, rng: &Rng) -> Result<VarianceReport> {
    estimate_variances_with(cfg, sigma_w, trials, rng, 1)
}

pub fn estimate_variances_with(cfg: &AttnConfig, sigma_w: f64, trials: usize, rng: &Rng, threads: usize) -> Result<VarianceReport> {
    let (mut components, v) = measure(cfg, sigma_w, trials, rng, threads)?;
    let mut checks: Vec<Check> = components
        .iter()
        .map(|c| {
            let band = if c.component == "K^RoPE" { K_ROPE_BAND } else { RATIO_BAND };
            Check::new(format!("Var({})", c.component), c.sample_variance, c.predicted_variance, band)
        })
        .collect();
    let p = &components;
    checks.push(Check::new(
        "Var(K^RoPE)/Var(K^NoPE)",
        ratio(v[0], v[1]),
        ratio(p[0].predicted_variance, p[1].predicted_variance),
        RATIO_BAND,
    ));
    push_parity(cfg, parity(cfg, sigma_w, trials, rng, threads)?, &mut components, &mut checks);
    Ok(VarianceReport {
        variant: cfg.label(),
        calibrated: cfg.scaling_enabled,
        sigma_w,
        trials,
        scale_factors: calib_factors(cfg),
        components,
        checks,
    })
}

/// With α_q, α_kv (and α_attn for MLRA) applied, every component's
/// variance should match Var(K^RoPE) and the branch sum a single branch.
/// Scaling is switched on if `cfg` has it off.
pub fn verify_calibration(cfg: &AttnConfig, sigma_w: f64, trials: usize, rng: &Rng) -> Result<VarianceReport> {
    verify_calibration_with(cfg, sigma_w, trials, rng, 1)
}

pub fn verify_calibration_with(cfg: &AttnConfig, sigma_w: f64, trials: usize, rng: &Rng, threads: usize) -> Result<VarianceReport> {
    let cfg = cfg.clone().with_scaling(true);
    let (mut components, v) = measure(&cfg, sigma_w, trials, rng, threads)?;
    let mut checks = Vec::new();
    for (k, name) in COMPONENTS.iter().enumerate().skip(1) {
        checks.push(Check::new(format!("Var({name})/Var(K^RoPE)"), ratio(v[k], v[0]), 1.0, RATIO_BAND));
    }
    push_parity(&cfg, parity(&cfg, sigma_w, trials, rng, threads)?, &mut components, &mut checks);
    Ok(VarianceReport {
        variant: cfg.label(),
        calibrated: true,
        sigma_w,
        trials,
        scale_factors: calib_factors(&cfg),
        components,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_trials() {
        let cfg = AttnConfig::tiny("MLA").unwrap();
        let e = estimate_variances(&cfg, 0.02, 9_999, &Rng::new(1)).unwrap_err();
        assert!(matches!(e, AttnError::Config(_)));
    }

    #[test]
    fn baselines_rejected() {
        let cfg = AttnConfig::tiny("GQA").unwrap();
        assert!(estimate_variances(&cfg, 0.02, MIN_TRIALS, &Rng::new(1)).is_err());
    }

    #[test]
    fn zero_sigma_all_zero() {
        let cfg = AttnConfig::tiny("MLRA-4").unwrap();
        let r = estimate_variances(&cfg, 0.0, MIN_TRIALS, &Rng::new(1)).unwrap();
        assert!(r.components.iter().all(|c| c.sample_variance == 0.0), "{r:?}");
    }
}
