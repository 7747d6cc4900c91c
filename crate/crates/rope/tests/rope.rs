use attnkit_core::{Rng, Tensor};
use attnkit_rope::{equivariance_gap, projected_gap, rope_apply, RopeParams};
use proptest::prelude::*;

fn vec_of(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut v = vec![0.0; n];
    rng.fill_normal(&mut v);
    v
}

#[test]
fn equivariance_over_random_triples() {
    let p = RopeParams::new(64, 10_000.0).unwrap();
    let mut rng = Rng::new(21);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (q, k) = (vec_of(64, &mut rng), vec_of(64, &mut rng));
        let t = (rng.below(0, 4096), rng.below(0, 4096));
        let s = rng.below(0, 4096);
        worst = worst.max(equivariance_gap(&q, &k, t, s, &p).unwrap());
    }
    assert!(worst <= 1e-9, "{worst:e}");
}

#[test]
fn projection_after_rotation_is_detected() {
    let p = RopeParams::new(16, 10_000.0).unwrap();
    let mut rng = Rng::new(22);
    let wq = Tensor::gaussian(&[16, 16], 1.0, &mut rng);
    let wk = Tensor::gaussian(&[16, 16], 1.0, &mut rng);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (q, k) = (vec_of(16, &mut rng), vec_of(16, &mut rng));
        let t = (rng.below(0, 64), rng.below(0, 64));
        worst = worst.max(projected_gap(&q, &k, t, rng.below(1, 512), &wq, &wk, &p).unwrap());
    }
    assert!(worst > 1e-3, "{worst:e}");
}

#[test]
fn identity_projection_keeps_equivariance() {
    let p = RopeParams::new(8, 10_000.0).unwrap();
    let id = Tensor::identity(8);
    let mut rng = Rng::new(23);
    let (q, k) = (vec_of(8, &mut rng), vec_of(8, &mut rng));
    assert!(projected_gap(&q, &k, (3, 9), 100, &id, &id, &p).unwrap() <= 1e-9);
}

#[test]
fn second_moment_preserved() {
    let p = RopeParams::new(32, 10_000.0).unwrap();
    let mut rng = Rng::new(24);
    let x = Tensor::gaussian(&[50, 32], 1.0, &mut rng);
    let pos: Vec<usize> = (0..50).map(|t| t * 37).collect();
    let y = rope_apply(&x, &p, &pos).unwrap();
    let ms = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
    assert!((ms(&y) - ms(&x)).abs() <= 1e-12 * ms(&x));
}

proptest! {
    #[test]
    fn rotations_compose(seed in 0u64..10_000, a in 0usize..5000, b in 0usize..5000) {
        let p = RopeParams::new(16, 10_000.0).unwrap();
        let x = vec_of(16, &mut Rng::new(seed));
        let mut once = x.clone();
        p.rotate(&mut once, a + b).unwrap();
        let mut twice = x;
        p.rotate(&mut twice, a).unwrap();
        p.rotate(&mut twice, b).unwrap();
        for (u, v) in once.iter().zip(&twice) {
            prop_assert!((u - v).abs() <= 1e-9);
        }
    }

    #[test]
    fn norm_preserved(seed in 0u64..10_000, pos in 0usize..100_000) {
        let p = RopeParams::new(32, 10_000.0).unwrap();
        let x = vec_of(32, &mut Rng::new(seed));
        let mut y = x.clone();
        p.rotate(&mut y, pos).unwrap();
        let n = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        prop_assert!((n(&x) - n(&y)).abs() <= 1e-12 * n(&x));
    }
}
