use attnkit_core::config::{AttnConfig, Variant, TABLE_LABELS};
use attnkit_core::tensor::RMS_EPS;
use attnkit_core::weights::weight_shapes;
use attnkit_core::{build_weights, cache_layout, AttnError, KvCache, Rng, Tensor};
use proptest::prelude::*;

/// Cached elements per token in the loading-table context, in units of d_h.
const KV_COLUMN: [(&str, usize, usize); 10] = [
    ("MHA", 128, 1),
    ("MQA", 2, 1),
    ("GQA", 16, 1),
    ("MLA", 9, 2),
    ("MFA", 4, 1),
    ("TPA", 6, 1),
    ("GLA-2", 9, 2),
    ("GTA", 17, 2),
    ("MLRA-2", 9, 2),
    ("MLRA-4", 9, 2),
];

#[test]
fn cache_width_matches_kv_column() {
    for (l, num, den) in KV_COLUMN {
        let cfg = AttnConfig::loading_context(l, 64).unwrap();
        let w = cache_layout(&cfg).unwrap().width();
        assert_eq!(w * den, num * cfg.d_h, "{l}");
    }
}

#[test]
fn built_weights_match_declared_shapes() {
    for l in TABLE_LABELS {
        for gated in [false, true] {
            let cfg = AttnConfig::tiny(l).unwrap().with_gate(gated);
            let ws = build_weights(&cfg, 0.1, &Rng::new(2)).unwrap();
            ws.check_shapes(&cfg).unwrap();
            let want: u64 = weight_shapes(&cfg).unwrap().iter().map(|(_, [r, c])| (r * c) as u64).sum();
            assert_eq!(ws.element_count(), want, "{l}");
        }
    }
}

#[test]
fn missing_fields_are_named() {
    let cfg = AttnConfig::new(Variant::Mla, 4, 32, 8);
    match cfg.validate() {
        Err(AttnError::Config(msg)) => assert!(msg.contains("d_c") && msg.contains("d_cq"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn cache_rows_are_append_only() {
    let cfg = AttnConfig::tiny("GQA").unwrap();
    let mut cache = KvCache::for_config(&cfg, 5).unwrap();
    let w = cache.layout().width();
    cache.append(&vec![1.0; w]).unwrap();
    let sum = cache.checksum(1);
    cache.append(&vec![2.0; w]).unwrap();
    assert_eq!(cache.checksum(1), sum);
    assert_eq!(cache.next_position(), 7);
    assert!(cache.append(&vec![0.0; w + 1]).is_err());
}

#[test]
fn forks_are_reproducible_and_distinct() {
    let r = Rng::new(9);
    let draw = |label: &str| {
        let mut x = r.fork(label);
        (0..4).map(|_| x.normal()).collect::<Vec<f64>>()
    };
    let (a, again, b) = (draw("a"), draw("a"), draw("b"));
    assert_eq!(a, again);
    assert_ne!(a, b);
}

proptest! {
    #[test]
    fn product_transposes(seed in 0u64..5_000, n in 1usize..6, k in 1usize..6, m in 1usize..6) {
        let mut rng = Rng::new(seed);
        let a = Tensor::gaussian(&[n, k], 1.0, &mut rng);
        let b = Tensor::gaussian(&[k, m], 1.0, &mut rng);
        let left = a.matmul(&b).unwrap().transpose().unwrap();
        let right = b.transpose().unwrap().matmul(&a.transpose().unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right).unwrap() <= 1e-12);
    }

    #[test]
    fn rmsnorm_rows_have_unit_rms(seed in 0u64..5_000, w in 2usize..40, scale in 0.01f64..100.0) {
        let mut rng = Rng::new(seed);
        let x = Tensor::gaussian(&[3, w], scale, &mut rng).rmsnorm(RMS_EPS);
        for r in 0..3 {
            let ms = x.row(r).iter().map(|v| v * v).sum::<f64>() / w as f64;
            prop_assert!((ms - 1.0).abs() < 1e-3);
        }
    }
}
