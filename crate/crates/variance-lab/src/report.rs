//! Report types.

use serde::Serialize;

use attnkit_latent::ScaleFactors;

/// Tolerance for Var(K^RoPE) against `d·σ_w²`.
pub const K_ROPE_BAND: f64 = 0.03;
/// Tolerance for the other components and for variance ratios.
pub const RATIO_BAND: f64 = 0.05;
/// Tolerance for branch-sum output parity.
pub const PARITY_BAND: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentStat {
    pub component: String,
    pub sample_variance: f64,
    pub predicted_variance: f64,
    pub relative_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub target: f64,
    pub relative_deviation: f64,
    pub band: f64,
    pub pass: bool,
}

impl Check {
    pub(crate) fn new(name: impl Into<String>, measured: f64, target: f64, band: f64) -> Self {
        let dev = rel_dev(measured, target);
        Check {
            name: name.into(),
            measured,
            target,
            relative_deviation: dev,
            band,
            pass: dev <= band,
        }
    }
}

/// `|x − target| / |target|`, or `|x|` when the target is zero.
#[must_use]
pub fn rel_dev(x: f64, target: f64) -> f64 {
    if target == 0.0 {
        x.abs()
    } else {
        ((x - target) / target).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub variant: String,
    pub calibrated: bool,
    pub sigma_w: f64,
    pub trials: usize,
    pub scale_factors: ScaleFactors,
    pub components: Vec<ComponentStat>,
    pub checks: Vec<Check>,
}

impl VarianceReport {
    #[must_use]
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    #[must_use]
    pub fn component(&self, name: &str) -> Option<&ComponentStat> {
        self.components.iter().find(|c| c.component == name)
    }

    #[must_use]
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}
