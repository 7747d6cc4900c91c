use attnkit_core::config::{AttnConfig, TABLE_LABELS};
use attnkit_core::weights::WeightKind;
use attnkit_core::{build_weights, AttnError, KvCache, Rng, Tensor, WeightSet};
use attnkit_cost::{per_device_load, TP_DEGREES};
use attnkit_decode::{decode_step, device_step, Mode};
use attnkit_tp::{loading_matrix_csv, make_shards, sim_decode, small_tp_config, ReductionKind};

/// Weights, a cache holding `prefix` decoded tokens, and the next token.
fn setup(cfg: &AttnConfig, prefix: usize, seed: u64) -> (WeightSet, KvCache, Vec<f64>) {
    let rng = Rng::new(seed);
    let ws = build_weights(cfg, 0.3, &rng.fork("w")).unwrap();
    let h = Tensor::gaussian(&[prefix + 1, cfg.d], 1.0, &mut rng.fork("h"));
    let mut cache = KvCache::for_config(cfg, 0).unwrap();
    for t in 0..prefix {
        decode_step(cfg, &ws, &mut cache, h.row(t), Mode::Absorbed).unwrap();
    }
    (ws, cache, h.row(prefix).to_vec())
}

#[test]
fn distributed_equals_single_device() {
    for l in TABLE_LABELS {
        let cfg = small_tp_config(l).unwrap();
        for phi in TP_DEGREES {
            let mut worst = 0.0f64;
            for trial in 0..200u64 {
                let (ws, cache, x) = setup(&cfg, 1 + (trial % 3) as usize, trial * 31 + phi as u64);
                let mut shards = make_shards(&cfg, &ws, &cache, phi).unwrap();
                let dist = sim_decode(&mut shards, &x).unwrap();
                let mut full = cache.clone();
                let single = decode_step(&cfg, &ws, &mut full, &x, Mode::Absorbed).unwrap();
                worst = worst.max(dist.o.max_abs_diff(&single.o).unwrap());
            }
            assert!(worst <= 1e-10, "{l} φ={phi}: {worst:e}");
        }
    }
}

#[test]
fn measured_loading_matches_table() {
    let mut ledgers = Vec::new();
    for l in TABLE_LABELS {
        let cfg = AttnConfig::loading_context(l, 64).unwrap().with_scaling(true);
        let (ws, cache, x) = setup(&cfg, 2, 9);
        for phi in TP_DEGREES {
            let mut shards = make_shards(&cfg, &ws, &cache, phi).unwrap();
            let out = sim_decode(&mut shards, &x).unwrap();
            let want = per_device_load(&cfg, phi).unwrap();
            for d in &out.ledger.devices {
                assert_eq!(d.exact, want, "{l} φ={phi} device {}", d.device);
                // a device reads all it stores and nothing else
                assert_eq!(d.reads, d.stored_elements, "{l} φ={phi}");
            }
            assert!(out.ledger.matches_model(&cfg).unwrap());
            ledgers.push(out.ledger);
        }
    }
    let csv = loading_matrix_csv(&ledgers).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.lines().any(|r| r == "MLRA-4,4.5,2.5,1.5,1.5"), "{csv}");
    assert!(csv.lines().any(|r| r == "MLA,4.5,4.5,4.5,4.5"), "{csv}");
}

#[test]
fn reduction_kinds() {
    let kind = |l: &str, phi| {
        let cfg = small_tp_config(l).unwrap();
        let (ws, cache, _) = setup(&cfg, 1, 1);
        make_shards(&cfg, &ws, &cache, phi).unwrap().reduction
    };
    for phi in [2, 4, 8] {
        assert_eq!(kind("MLA", phi), ReductionKind::Concat);
        assert_eq!(kind("GLA-2", phi), ReductionKind::Concat);
    }
    assert_eq!(kind("MLRA-4", 2), ReductionKind::Sum);
    assert_eq!(kind("MLRA-4", 4), ReductionKind::Sum);
    assert_eq!(kind("MLRA-4", 8), ReductionKind::SumConcat);
    assert_eq!(kind("MLRA-2", 2), ReductionKind::Concat);
    assert_eq!(kind("MLRA-2", 4), ReductionKind::SumConcat);
    assert_eq!(kind("MLRA-4", 1), ReductionKind::Identity);
}

#[test]
fn shards_tile_every_weight() {
    for l in TABLE_LABELS {
        let cfg = small_tp_config(l).unwrap();
        let (ws, cache, _) = setup(&cfg, 1, 2);
        for phi in TP_DEGREES {
            let shards = make_shards(&cfg, &ws, &cache, phi).unwrap();
            for (name, t) in ws.iter() {
                if matches!(name.kind, WeightKind::O | WeightKind::G) {
                    continue;
                }
                let (r, c) = (t.shape()[0], t.shape()[1]);
                let mut hit = vec![false; r * c];
                for dev in &shards.devices {
                    for b in dev.weights.blocks.iter().filter(|b| b.spec.name == *name) {
                        let w = b.spec.cols.len();
                        for i in b.spec.rows.clone() {
                            for j in b.spec.cols.clone() {
                                hit[i * c + j] = true;
                                let local = (i - b.spec.rows.start) * w + j - b.spec.cols.start;
                                assert_eq!(b.data.data()[local], t.data()[i * c + j]);
                            }
                        }
                    }
                }
                assert!(hit.iter().all(|&x| x), "{l} φ={phi} {name} not covered");
            }
        }
    }
}

#[test]
fn device_cannot_run_foreign_units() {
    for l in ["MHA", "GQA", "TPA", "MLA", "GLA-2", "MLRA-2", "MLRA-4"] {
        let cfg = small_tp_config(l).unwrap();
        let (ws, cache, x) = setup(&cfg, 2, 3);
        let mut shards = make_shards(&cfg, &ws, &cache, 4).unwrap();
        let foreign = shards.devices[1].units.clone();
        let dev = &mut shards.devices[0];
        let err = device_step(&cfg, &dev.weights, &mut dev.cache, &x, &foreign, Mode::Absorbed).unwrap_err();
        assert!(matches!(err, AttnError::Integrity(_)), "{l}: {err}");
    }
}

#[test]
fn unsupported_degree_names_axis() {
    let cfg = small_tp_config("MLA").unwrap();
    let (ws, cache, _) = setup(&cfg, 1, 4);
    let e = make_shards(&cfg, &ws, &cache, 16).unwrap_err().to_string();
    assert!(e.contains("unsupported TP degree") && e.contains("query heads"), "{e}");
    let odd = AttnConfig::from_label("GQA", 12, 16, 4).unwrap().with_groups(3);
    let e = make_shards(&odd, &build_weights(&odd, 0.3, &Rng::new(1)).unwrap(), &KvCache::for_config(&odd, 0).unwrap(), 8)
        .unwrap_err()
        .to_string();
    assert!(e.contains("unsupported TP degree 8"), "{e}");
}

#[test]
fn ledger_serializes_in_fixed_order() {
    let cfg = small_tp_config("GQA").unwrap();
    let (ws, cache, x) = setup(&cfg, 1, 5);
    let mut shards = make_shards(&cfg, &ws, &cache, 4).unwrap();
    let led = sim_decode(&mut shards, &x).unwrap().ledger;
    let js = led.to_json().unwrap();
    let pos = |k: &str| js.find(&format!("\"{k}\"")).unwrap();
    assert!(pos("variant") < pos("tp") && pos("tp") < pos("devices") && pos("devices") < pos("replicated_cache"));
    // four devices over two KV heads: each head is held twice
    assert_eq!(led.replicated_cache.len(), 4);
    assert!(led.replicated_cache.iter().all(|r| r.devices.len() == 2));
    assert!(led.replicated_weights.contains(&"W^K".to_string()));
    let csv = led.device_csv().unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("device,stored (elements),reads (elements)"));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn branch_sharding_is_bit_exact(
            seed in 0u64..100_000,
            label in prop::sample::select(vec!["MLA", "GLA-2", "MLRA-2", "MLRA-4"]),
            phi in prop::sample::select(TP_DEGREES.to_vec()),
            prefix in 1usize..4,
        ) {
            let cfg = small_tp_config(label).unwrap();
            let (ws, cache, x) = setup(&cfg, prefix, seed);
            let mut shards = make_shards(&cfg, &ws, &cache, phi).unwrap();
            let dist = sim_decode(&mut shards, &x).unwrap();
            let mut full = cache.clone();
            let single = decode_step(&cfg, &ws, &mut full, &x, Mode::Absorbed).unwrap();
            prop_assert_eq!(dist.o, single.o);
        }
    }
}
