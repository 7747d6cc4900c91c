use attnkit_core::{AttnConfig, Rng};
use attnkit_variance::{estimate_variances, estimate_variances_with, verify_calibration, MIN_TRIALS};
use proptest::prelude::*;

const TRIALS: usize = 100_000;

/// d = 256 with a d_c = 64 latent.
fn mla256() -> AttnConfig {
    AttnConfig::from_label("MLA", 4, 256, 64).unwrap().with_latent(64, 128, 32)
}

#[test]
fn rope_key_variance_is_d_sigma_squared() {
    let r = estimate_variances(&mla256(), 0.02, TRIALS, &Rng::new(11)).unwrap();
    let k = r.component("K^RoPE").unwrap();
    assert!((k.predicted_variance - 256.0 * 4e-4).abs() < 1e-15);
    assert!(k.relative_deviation <= 0.03, "{k:?}");
    let ratio = r.check("Var(K^RoPE)/Var(K^NoPE)").unwrap();
    assert_eq!(ratio.target, 4.0);
    assert!(ratio.pass, "{ratio:?}");
    assert!(r.all_pass(), "{}", r.to_json().unwrap());
}

#[test]
fn main_mla_calibrated() {
    let cfg = AttnConfig::main("MLA").unwrap();
    let r = verify_calibration(&cfg, 0.02, TRIALS, &Rng::new(12)).unwrap();
    let q = r.check("Var(Q^NoPE)/Var(K^RoPE)").unwrap();
    assert!((0.95..=1.05).contains(&q.measured), "{q:?}");
    assert!(r.all_pass(), "{}", r.to_json().unwrap());
}

#[test]
fn uncalibrated_mismatch_reappears() {
    let cfg = mla256().with_scaling(false);
    let r = estimate_variances(&cfg, 0.05, TRIALS, &Rng::new(13)).unwrap();
    let c = r.check("Var(K^RoPE)/Var(K^NoPE)").unwrap();
    assert!(c.pass && (c.measured - 4.0).abs() / 4.0 <= 0.05, "{c:?}");
}

#[test]
fn mlra4_branch_sum_parity() {
    let raw = AttnConfig::tiny("MLRA-4").unwrap();
    let r = estimate_variances(&raw, 0.02, TRIALS, &Rng::new(14)).unwrap();
    let c = r.check("Var(O-branch-sum)/Var(O-branch)").unwrap();
    // four uncorrelated branches, no rescaling: four times the variance
    assert_eq!(c.target, 4.0);
    assert!(c.pass, "{c:?}");
    let cal = verify_calibration(&raw, 0.02, TRIALS, &Rng::new(14)).unwrap();
    let c = cal.check("Var(O-branch-sum)/Var(O-branch)").unwrap();
    assert_eq!(c.target, 1.0);
    assert!(c.pass, "{c:?}");
    assert_eq!(cal.scale_factors.alpha_attn.to_string(), "1/2");
    assert!(cal.all_pass(), "{}", cal.to_json().unwrap());
}

#[test]
fn mlra2_and_gla2_calibrated() {
    for l in ["MLRA-2", "GLA-2"] {
        let r = verify_calibration(&AttnConfig::tiny(l).unwrap(), 0.02, TRIALS, &Rng::new(15)).unwrap();
        assert!(r.all_pass(), "{l}: {}", r.to_json().unwrap());
    }
}

#[test]
fn deterministic_and_thread_independent() {
    let cfg = AttnConfig::tiny("MLA").unwrap().with_scaling(true);
    let a = estimate_variances_with(&cfg, 0.1, MIN_TRIALS, &Rng::new(16), 1).unwrap();
    let b = estimate_variances_with(&cfg, 0.1, MIN_TRIALS, &Rng::new(16), 3).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let c = estimate_variances(&cfg, 0.1, MIN_TRIALS, &Rng::new(17)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn json_field_order() {
    let r = estimate_variances(&AttnConfig::tiny("MLA").unwrap(), 0.1, MIN_TRIALS, &Rng::new(1)).unwrap();
    let js = r.to_json().unwrap();
    let at = |k: &str| js.find(&format!("\"{k}\"")).unwrap();
    assert!(at("variant") < at("calibrated") && at("trials") < at("scale_factors") && at("components") < at("checks"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]
    /// Every draw of K^RoPE is linear in σ_w for a fixed stream.
    #[test]
    fn rope_key_variance_scales_with_sigma_squared(s in 0.01f64..2.0, seed in 0u64..1000) {
        let cfg = AttnConfig::tiny("MLA").unwrap();
        let one = estimate_variances(&cfg, 1.0, MIN_TRIALS, &Rng::new(seed)).unwrap();
        let scaled = estimate_variances(&cfg, s, MIN_TRIALS, &Rng::new(seed)).unwrap();
        let (a, b) = (one.components[0].sample_variance, scaled.components[0].sample_variance);
        prop_assert!((b / a - s * s).abs() <= 1e-9 * s * s);
    }
}
