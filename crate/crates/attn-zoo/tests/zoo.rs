use attnkit_core::config::{AttnConfig, Variant};
use attnkit_core::weights::{WeightKind, WeightName};
use attnkit_core::{build_weights, Rng, Tensor, WeightSet};
use attnkit_rope::RopeParams;
use attnkit_zoo::{prefill, prefill_at};
use proptest::prelude::*;

const BASELINES: [&str; 6] = ["MHA", "MQA", "GQA", "MFA", "TPA", "GTA"];

fn one(k: WeightKind) -> WeightName {
    WeightName::of(k)
}

fn inputs(cfg: &AttnConfig, n: usize, seed: u64) -> (WeightSet, Tensor) {
    let rng = Rng::new(seed);
    let ws = build_weights(cfg, 0.3, &rng.fork("w")).unwrap();
    (ws, Tensor::gaussian(&[n, cfg.d], 1.0, &mut rng.fork("h")))
}

/// Plain causal softmax attention for one head: `q, k: [n × a]`, `v: [n × b]`.
fn oracle_head(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    (0..q.len())
        .map(|t| {
            let s: Vec<f64> = (0..=t).map(|u| tau * q[t].iter().zip(&k[u]).map(|(a, b)| a * b).sum::<f64>()).collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..v[0].len()).map(|j| (0..=t).map(|u| e[u] / z * v[u][j]).sum()).collect()
        })
        .collect()
}

fn row_times(x: &[f64], w: &Tensor, cols: std::ops::Range<usize>) -> Vec<f64> {
    let c = w.shape()[1];
    cols.map(|j| x.iter().enumerate().map(|(m, a)| a * w.data()[m * c + j]).sum()).collect()
}

#[test]
fn gqa_equals_mha_with_tied_heads() {
    let g = AttnConfig::tiny("GQA").unwrap();
    let m = AttnConfig::tiny("MHA").unwrap();
    let (wg, h) = inputs(&g, 6, 31);
    let mut wm = build_weights(&m, 0.3, &Rng::new(0)).unwrap();
    let r = g.h / g.g;
    for kind in [WeightKind::K, WeightKind::V] {
        let t = wg.get(one(kind)).unwrap();
        let tied = t.reshape(&[g.d, g.g, g.d_h]).unwrap().repeat_interleave(1, r).unwrap();
        wm.replace(one(kind), tied.reshape(&[m.d, m.h * m.d_h]).unwrap()).unwrap();
    }
    for kind in [WeightKind::Q, WeightKind::O] {
        wm.replace(one(kind), wg.get(one(kind)).unwrap().clone()).unwrap();
    }
    let a = prefill(&g, &wg, &h).unwrap();
    let b = prefill(&m, &wm, &h).unwrap();
    assert!(a.o.max_abs_diff(&b.o).unwrap() <= 1e-12);
    // the grouped cache is r times smaller
    assert_eq!(b.cache.stored_elements(), r * a.cache.stored_elements());
}

#[test]
fn mqa_is_single_group_gqa() {
    let q = AttnConfig::tiny("MQA").unwrap();
    let g = AttnConfig::tiny("GQA").unwrap().with_groups(1);
    let (ws, h) = inputs(&q, 5, 32);
    let mut wg = build_weights(&g, 0.3, &Rng::new(0)).unwrap();
    for (name, t) in ws.iter() {
        wg.replace(*name, t.clone()).unwrap();
    }
    let a = prefill(&q, &ws, &h).unwrap();
    let b = prefill(&g, &wg, &h).unwrap();
    assert!(a.o.max_abs_diff(&b.o).unwrap() <= 1e-12);
}

#[test]
fn tpa_matches_explicit_factor_sums() {
    let cfg = AttnConfig::tiny("TPA").unwrap();
    let (ws, h) = inputs(&cfg, 5, 33);
    let (n, heads, dh) = (5, cfg.h, cfg.d_h);
    let rope = RopeParams::new(dh, cfg.rope_base).unwrap();
    // [t][i] → head vector
    let build = |a: WeightKind, c: WeightKind, beta: usize, rotate: bool| -> Vec<Vec<Vec<f64>>> {
        (0..n)
            .map(|t| {
                let x = h.row(t);
                let coef = row_times(x, ws.get(one(a)).unwrap(), 0..beta * heads);
                let mut comps = row_times(x, ws.get(one(c)).unwrap(), 0..beta * dh);
                if rotate {
                    for part in comps.chunks_mut(dh) {
                        rope.rotate(part, t).unwrap();
                    }
                }
                (0..heads)
                    .map(|i| {
                        (0..dh)
                            .map(|j| (0..beta).map(|b| coef[b * heads + i] * comps[b * dh + j]).sum::<f64>() / beta as f64)
                            .collect()
                    })
                    .collect()
            })
            .collect()
    };
    let q = build(WeightKind::AQ, WeightKind::CQ, cfg.beta_q, true);
    let k = build(WeightKind::AK, WeightKind::CK, cfg.beta_kv, true);
    let v = build(WeightKind::AV, WeightKind::CV, cfg.beta_kv, false);
    let out = prefill(&cfg, &ws, &h).unwrap();
    for i in 0..heads {
        let col = |x: &Vec<Vec<Vec<f64>>>| x.iter().map(|r| r[i].clone()).collect::<Vec<_>>();
        let want = oracle_head(&col(&q), &col(&k), &col(&v), cfg.tau());
        for (t, row) in want.iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                assert!((out.o.at(&[t, i, j]) - w).abs() <= 1e-12, "head {i} token {t}");
            }
        }
    }
}

#[test]
fn tpa_heads_with_tied_coefficients_coincide() {
    // β = 1 and every head's key/value coefficient column equal: all heads
    // share one key/value stream
    let cfg = AttnConfig::tiny("TPA").unwrap().with_ranks(1, 1);
    let (mut ws, h) = inputs(&cfg, 4, 34);
    for kind in [WeightKind::AK, WeightKind::AV] {
        let t = ws.get(one(kind)).unwrap().clone();
        let col0 = t.slice(1, 0..1).unwrap();
        ws.replace(one(kind), col0.repeat_interleave(1, cfg.h).unwrap()).unwrap();
    }
    let out = prefill(&cfg, &ws, &h).unwrap();
    // heads now differ only through their query coefficients
    let t = ws.get(one(WeightKind::AQ)).unwrap().clone();
    ws.replace(one(WeightKind::AQ), t.slice(1, 0..1).unwrap().repeat_interleave(1, cfg.h).unwrap()).unwrap();
    let tied = prefill(&cfg, &ws, &h).unwrap();
    for i in 1..cfg.h {
        let a = tied.o.slice(1, 0..1).unwrap();
        let b = tied.o.slice(1, i..i + 1).unwrap();
        assert_eq!(a, b);
    }
    assert!(out.o.max_abs_diff(&tied.o).unwrap() > 1e-6);
}

#[test]
fn future_tokens_never_leak() {
    for l in BASELINES {
        let cfg = AttnConfig::tiny(l).unwrap();
        let (ws, h) = inputs(&cfg, 6, 35);
        let mut h2 = h.clone();
        for x in &mut h2.data_mut()[4 * cfg.d..] {
            *x = -3.0 * *x + 1.0;
        }
        let a = prefill(&cfg, &ws, &h).unwrap().o.slice(0, 0..4).unwrap();
        let b = prefill(&cfg, &ws, &h2).unwrap().o.slice(0, 0..4).unwrap();
        assert_eq!(a, b, "{l}");
    }
}

#[test]
fn cache_widths() {
    for l in BASELINES {
        let cfg = AttnConfig::tiny(l).unwrap();
        let (ws, h) = inputs(&cfg, 3, 36);
        let p = prefill(&cfg, &ws, &h).unwrap();
        let per_token = p.cache.stored_elements() / 3;
        let want = match cfg.variant {
            Variant::Mha => 2 * cfg.h * cfg.d_h,
            Variant::Mqa => 2 * cfg.d_h,
            Variant::Gqa => 2 * cfg.g * cfg.d_h,
            Variant::Mfa => 4 * cfg.d_h,
            Variant::Tpa => 2 * cfg.beta_kv * (cfg.h + cfg.d_h),
            Variant::Gta => cfg.g * cfg.d_h + cfg.d_hr,
            _ => unreachable!(),
        };
        assert_eq!(per_token, want, "{l}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn joint_shift_leaves_outputs(seed in 0u64..10_000, s in 1usize..5000, pick in 0usize..6) {
        let cfg = AttnConfig::tiny(BASELINES[pick]).unwrap();
        let (ws, h) = inputs(&cfg, 4, seed);
        let a = prefill(&cfg, &ws, &h).unwrap();
        let b = prefill_at(&cfg, &ws, &h, s).unwrap();
        prop_assert!(a.o.max_abs_diff(&b.o).unwrap() <= 1e-9);
    }
}
