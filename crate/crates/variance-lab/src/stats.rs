//! Sample moments and the trial runner.

use attnkit_core::Rng;

/// Unbiased sample variance, accumulated in index order.
#[must_use]
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
}

/// Sample kurtosis `m4 / m2²` (3 for a Gaussian).
#[must_use]
pub fn sample_kurtosis(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2)
}

/// Run `f` on trials `0..trials`, each with its own stream forked from
/// `rng` by index. Results come back in trial order whatever `threads` is.
pub fn run_trials<const K: usize, F>(trials: usize, threads: usize, rng: &Rng, f: F) -> [Vec<f64>; K]
where
    F: Fn(&mut Rng) -> [f64; K] + Sync,
{
    let one = |t: usize| f(&mut rng.fork_index(t as u64));
    let rows: Vec<[f64; K]> = if threads <= 1 {
        (0..trials).map(one).collect()
    } else {
        let chunk = trials.div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..trials)
                .step_by(chunk)
                .map(|lo| {
                    let one = &one;
                    s.spawn(move || (lo..(lo + chunk).min(trials)).map(one).collect::<Vec<_>>())
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("trial thread panicked")).collect()
        })
    };
    std::array::from_fn(|k| rows.iter().map(|r| r[k]).collect())
}
