//! Subcommand bodies. Each returns the text to emit, an exit code and an
//! optional note for stderr.

use serde::Serialize;

use attnkit_core::{AttnConfig, AttnError, Result, Rng, TABLE_LABELS};
use attnkit_cost::{
    decode_workload, fmt_q, intensity_csv, per_device_load, q, roofline_decode_time, table_reports, to_f64, Context,
    Regime, TP_DEGREES,
};
use attnkit_tp::{check_support, make_shards, shardable_axis, sim_decode_with, small_tp_config, ReductionKind, TrafficLedger};
use attnkit_variance::{estimate_variances_with, verify_calibration_with, VarianceReport};

use crate::config::{Format, RunConfig};
use crate::equiv::{equiv_run, EquivReport, EQUIV_SIGMA, EQUIV_VARIANTS};
use crate::suite::{self, tp_max_error, ROOFLINE_TOKENS, TP_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct Done {
    pub body: String,
    pub code: i32,
    pub note: Option<String>,
}

impl Done {
    fn ok(body: String) -> Self {
        Done { body, code: 0, note: None }
    }
}

/// Which table `tables` prints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum TableKind {
    #[default]
    Loading,
    Intensity,
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| AttnError::Integrity(format!("csv: {e}"));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| AttnError::Integrity(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| AttnError::Integrity(format!("csv: {e}")))
}

fn json_text<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| AttnError::Integrity(format!("json: {e}")))
}

fn context(rc: &RunConfig) -> Result<Context> {
    Context::parse(rc.context.as_deref().unwrap_or("kimi"))
}

pub fn equiv(rc: &RunConfig) -> Result<Done> {
    let labels: Vec<&str> = match rc.variant.as_deref() {
        Some(l) => vec![l],
        None => EQUIV_VARIANTS.to_vec(),
    };
    let seed = rc.seed.unwrap_or(0);
    let trials = rc.trials.unwrap_or(1000);
    let sigma = rc.sigma_w.unwrap_or(EQUIV_SIGMA);
    let mut reports: Vec<EquivReport> = Vec::new();
    for l in labels {
        let cfg = rc.attn_config(l, |l| Ok(AttnConfig::tiny(l)?.with_scaling(true)))?;
        reports.push(equiv_run(&cfg, sigma, seed, trials)?);
    }
    let body = match rc.format.unwrap_or(Format::Csv) {
        Format::Json => json_text(&reports)?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = reports
                .iter()
                .map(|r| {
                    vec![
                        r.variant.clone(),
                        r.trials.to_string(),
                        r.first_seed.to_string(),
                        format!("{:e}", r.max_rel_error),
                        r.worst_seed.to_string(),
                        r.first_failing_seed.map_or(String::new(), |s| s.to_string()),
                        format!("{:e}", r.tolerance),
                        r.pass.to_string(),
                    ]
                })
                .collect();
            csv_text(
                &[
                    "variant",
                    "trials",
                    "first_seed",
                    "max_rel_error (relative)",
                    "worst_seed",
                    "first_failing_seed",
                    "tolerance (relative)",
                    "pass",
                ],
                &rows,
            )?
        }
    };
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| {
            let s = r.first_failing_seed.unwrap_or(r.worst_seed);
            format!(
                "{}: max relative error {:e} exceeds {:e}; failing seed {s} (replay with --seed {s} --trials 1)",
                r.variant, r.max_rel_error, r.tolerance
            )
        })
        .collect();
    Ok(Done {
        body,
        code: i32::from(!failed.is_empty()),
        note: (!failed.is_empty()).then(|| failed.join("\n")),
    })
}

pub fn tables(rc: &RunConfig, kind: TableKind) -> Result<Done> {
    let ctx = context(rc)?;
    let n = rc.tokens.unwrap_or(4096);
    let reports = table_reports(ctx, n)?;
    let body = match (rc.format.unwrap_or(Format::Csv), kind) {
        (Format::Json, _) => json_text(&reports)?,
        (Format::Csv, TableKind::Loading) => attnkit_cost::loading_csv(&reports)?,
        (Format::Csv, TableKind::Intensity) => intensity_csv(&reports, n)?,
    };
    Ok(Done::ok(body))
}

pub fn variance(rc: &RunConfig, calibrate: bool, threads: usize) -> Result<Done> {
    let label = rc.variant_label()?;
    let cfg = rc.attn_config(label, AttnConfig::main)?;
    let sigma = rc.sigma_w.unwrap_or(suite::VARIANCE_SIGMA);
    let trials = rc.trials.unwrap_or(suite::VARIANCE_TRIALS);
    let rng = Rng::new(rc.seed.unwrap_or(0));
    let report: VarianceReport = if calibrate {
        verify_calibration_with(&cfg, sigma, trials, &rng, threads)?
    } else {
        estimate_variances_with(&cfg, sigma, trials, &rng, threads)?
    };
    let body = match rc.format.unwrap_or(Format::Json) {
        Format::Json => json_text(&report)?,
        Format::Csv => {
            let mut rows: Vec<Vec<String>> = report
                .components
                .iter()
                .map(|c| {
                    vec![
                        "component".into(),
                        c.component.clone(),
                        format!("{:e}", c.sample_variance),
                        format!("{:e}", c.predicted_variance),
                        format!("{:e}", c.relative_deviation),
                        String::new(),
                        String::new(),
                    ]
                })
                .collect();
            rows.extend(report.checks.iter().map(|c| {
                vec![
                    "check".into(),
                    c.name.clone(),
                    format!("{:e}", c.measured),
                    format!("{:e}", c.target),
                    format!("{:e}", c.relative_deviation),
                    format!("{:e}", c.band),
                    c.pass.to_string(),
                ]
            }));
            csv_text(
                &[
                    "kind",
                    "name",
                    "measured (squared activation units or ratio)",
                    "predicted (squared activation units or ratio)",
                    "relative_deviation (fraction)",
                    "band (fraction)",
                    "pass",
                ],
                &rows,
            )?
        }
    };
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{}: {:.4} vs {:.4} (band {})", c.name, c.measured, c.target, c.band))
        .collect();
    Ok(Done {
        body,
        code: i32::from(!failed.is_empty()),
        note: (!failed.is_empty()).then(|| format!("variance checks failed:\n{}", failed.join("\n"))),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TpResult {
    pub tp: usize,
    pub reduction: ReductionKind,
    pub trials: usize,
    pub max_abs_error: f64,
    pub equal: bool,
    pub ledger_matches_model: bool,
    pub ledger: TrafficLedger,
}

#[derive(Debug, Clone, Serialize)]
pub struct TpReport {
    pub variant: String,
    pub shardable_axis: &'static str,
    pub tolerance: f64,
    pub verdict: &'static str,
    pub results: Vec<TpResult>,
}

pub fn simulate_tp(rc: &RunConfig, threads: usize) -> Result<Done> {
    let label = rc.variant_label()?;
    let cfg = rc.attn_config(label, small_tp_config)?;
    let degrees = rc.tp.clone().unwrap_or_else(|| TP_DEGREES.to_vec());
    for &phi in &degrees {
        check_support(&cfg, phi)?;
    }
    let seed = rc.seed.unwrap_or(0);
    let trials = rc.trials.unwrap_or(20);
    if trials == 0 {
        return Err(AttnError::config("simulate-tp needs at least one trial"));
    }
    let mut results = Vec::new();
    for &phi in &degrees {
        let err = tp_max_error(&cfg, phi, seed, trials, threads)?;
        let rng = Rng::new(seed);
        let ws = attnkit_core::build_weights(&cfg, 0.3, &rng.fork("w"))?;
        let h = attnkit_core::Tensor::gaussian(&[3, cfg.d], 1.0, &mut rng.fork("h"));
        let mut cache = attnkit_core::KvCache::for_config(&cfg, 0)?;
        for t in 0..2 {
            attnkit_decode::decode_step(&cfg, &ws, &mut cache, h.row(t), attnkit_decode::Mode::Absorbed)?;
        }
        let mut shards = make_shards(&cfg, &ws, &cache, phi)?;
        let out = sim_decode_with(&mut shards, h.row(2), attnkit_decode::Mode::Absorbed, threads)?;
        results.push(TpResult {
            tp: phi,
            reduction: shards.reduction,
            trials,
            max_abs_error: err,
            equal: err <= TP_TOL,
            ledger_matches_model: out.ledger.matches_model(&cfg)?,
            ledger: out.ledger,
        });
    }
    let ok = results.iter().all(|r| r.equal && r.ledger_matches_model);
    let report = TpReport {
        variant: cfg.label(),
        shardable_axis: shardable_axis(&cfg),
        tolerance: TP_TOL,
        verdict: if ok { "equal" } else { "mismatch" },
        results,
    };
    let body = match rc.format.unwrap_or(Format::Json) {
        Format::Json => json_text(&report)?,
        Format::Csv => {
            let dh = q(cfg.d_h as u64);
            let rows: Vec<Vec<String>> = report
                .results
                .iter()
                .map(|r| {
                    Ok(vec![
                        r.tp.to_string(),
                        format!("{:?}", r.reduction),
                        r.trials.to_string(),
                        format!("{:e}", r.max_abs_error),
                        r.equal.to_string(),
                        fmt_q(&(r.ledger.max_per_token() / dh)),
                        fmt_q(&(per_device_load(&cfg, r.tp)? / dh)),
                        r.ledger_matches_model.to_string(),
                    ])
                })
                .collect::<Result<_>>()?;
            csv_text(
                &[
                    "tp_degree",
                    "reduction",
                    "trials",
                    "max_abs_error (output units)",
                    "equal",
                    "measured_load (elements of d_h per token per device)",
                    "model_load (elements of d_h per token per device)",
                    "ledger_matches_model",
                ],
                &rows,
            )?
        }
    };
    Ok(Done {
        body,
        code: i32::from(!ok),
        note: (!ok).then(|| format!("{}: distributed decode does not match single-device decode", report.variant)),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RooflineRow {
    pub method: String,
    pub tp_degree: usize,
    pub tokens: u64,
    pub bytes: String,
    pub flops: String,
    pub memory_seconds: f64,
    pub compute_seconds: f64,
    pub seconds: f64,
    pub regime: Regime,
    /// MLA at TP 1 over this row, exact.
    pub speedup_vs_mla_tp1: String,
}

pub fn roofline(rc: &RunConfig) -> Result<Done> {
    let ctx = context(rc)?;
    let hw = rc.hardware();
    let n = rc.tokens.unwrap_or(ROOFLINE_TOKENS);
    let labels: Vec<&str> = match rc.variant.as_deref() {
        Some(l) => vec![l],
        None => TABLE_LABELS.to_vec(),
    };
    let degrees = rc.tp.clone().unwrap_or_else(|| TP_DEGREES.to_vec());
    let time = |cfg: &AttnConfig, phi| -> Result<_> {
        let w = decode_workload(cfg, phi, n, &hw)?;
        Ok((roofline_decode_time(w.bytes, w.flops, &hw)?, w))
    };
    let (base, _) = time(&rc.attn_config("MLA", |l| ctx.config(l))?, 1)?;
    let mut rows = Vec::new();
    for l in labels {
        let cfg = rc.attn_config(l, |l| ctx.config(l))?;
        for &phi in &degrees {
            let (t, w) = time(&cfg, phi)?;
            rows.push(RooflineRow {
                method: cfg.label(),
                tp_degree: phi,
                tokens: n,
                bytes: fmt_q(&w.bytes),
                flops: fmt_q(&w.flops),
                memory_seconds: to_f64(&t.memory_seconds),
                compute_seconds: to_f64(&t.compute_seconds),
                seconds: t.seconds_f64(),
                regime: t.regime,
                speedup_vs_mla_tp1: fmt_q(&(base.seconds / t.seconds)),
            });
        }
    }
    let body = match rc.format.unwrap_or(Format::Csv) {
        Format::Json => json_text(&rows)?,
        Format::Csv => {
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.method.clone(),
                        r.tp_degree.to_string(),
                        r.tokens.to_string(),
                        r.bytes.clone(),
                        r.flops.clone(),
                        format!("{:e}", r.memory_seconds),
                        format!("{:e}", r.compute_seconds),
                        format!("{:e}", r.seconds),
                        format!("{:?}", r.regime),
                        r.speedup_vs_mla_tp1.clone(),
                    ]
                })
                .collect();
            csv_text(
                &[
                    "method",
                    "tp_degree",
                    "context (tokens)",
                    "bytes (bytes per step per device)",
                    "flops (flops per step per device)",
                    "memory_time (s)",
                    "compute_time (s)",
                    "time (s)",
                    "regime",
                    "speedup_vs_mla_tp1 (ratio)",
                ],
                &table,
            )?
        }
    };
    Ok(Done::ok(body))
}

pub fn selftest(rc: &RunConfig, threads: usize) -> Result<Done> {
    let (report, pass) = suite::selftest(rc.seed.unwrap_or(0), threads)?;
    Ok(Done {
        body: report,
        code: i32::from(!pass),
        note: (!pass).then(|| "selftest failed".to_string()),
    })
}
