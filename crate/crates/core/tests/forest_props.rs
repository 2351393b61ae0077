use metrovuln_core::imputation::fit_forest;
use metrovuln_core::ForestParams;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let y = x.iter().map(|r| 3.0 * r[0] + (2.0 * r[1]).sin() + r[2] * r[3] + rng.random_range(-0.3..0.3)).collect();
    (x, y)
}

fn params(trees: usize, seed: u64) -> ForestParams {
    ForestParams { trees, mtry: 2, min_node: 3, seed, bootstrap: true }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn thread_count_does_not_change_the_forest(data_seed in any::<u64>(), seed in any::<u64>()) {
        let (x, y) = fixture(data_seed, 80);
        let fit = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let f = pool.install(|| fit_forest(&x, &y, &params(40, seed))).unwrap();
            let preds: Vec<u64> = x.iter().map(|r| f.predict(r).unwrap().to_bits()).collect();
            (preds, f.oob_r2.map(f64::to_bits))
        };
        let one = fit(1);
        prop_assert_eq!(&one, &fit(4));
        prop_assert_eq!(&one, &fit(7));
    }
}

/// Spread of predictions across independently seeded forests.
fn seed_variance(x: &[Vec<f64>], y: &[f64], trees: usize, probe: &[f64]) -> f64 {
    let preds: Vec<f64> =
        (0..40).map(|s| fit_forest(x, y, &params(trees, 1000 + s)).unwrap().predict(probe).unwrap()).collect();
    let m = preds.iter().sum::<f64>() / preds.len() as f64;
    preds.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (preds.len() - 1) as f64
}

#[test]
fn more_trees_shrink_seed_variance_like_one_over_b() {
    let (x, y) = fixture(5, 120);
    for probe in [[0.2, -0.4, 0.5, 0.1], [-0.7, 0.3, -0.2, 0.9]] {
        let v5 = seed_variance(&x, &y, 5, &probe);
        let v40 = seed_variance(&x, &y, 40, &probe);
        // 8x the trees; expect about 1/8 of the variance
        let ratio = v40 / v5;
        assert!((0.125 / 3.0..=0.125 * 3.0).contains(&ratio), "variance ratio {ratio}");
    }
}
