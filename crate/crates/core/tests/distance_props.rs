use metrovuln_core::effects::{dist_euclidean, dist_hellinger, dist_kl, normalize};
use proptest::prelude::*;

fn counts() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..25).prop_flat_map(|k| {
        let v = prop::collection::vec(0u32..50, k).prop_map(|c| c.into_iter().map(f64::from).collect::<Vec<_>>());
        (v.clone(), v)
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn hellinger_and_kl_stay_in_range((a, b) in counts()) {
        let (p, q) = (normalize(&a, 1e-6).unwrap(), normalize(&b, 1e-6).unwrap());
        let hd = dist_hellinger(&p, &q).unwrap();
        let kl = dist_kl(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&hd));
        prop_assert!(kl >= 0.0);
        prop_assert!(dist_hellinger(&p, &p).unwrap() == 0.0);
        prop_assert!(dist_kl(&p, &p).unwrap() == 0.0);
    }

    #[test]
    fn scaling_counts_leaves_hellinger_and_kl_alone((a, b) in counts(), c in 1u32..20) {
        let c = f64::from(c);
        let scaled = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
        prop_assume!(a.iter().any(|&x| x > 0.0) && b.iter().any(|&x| x > 0.0));
        // unsmoothed normalisation; KL needs support of b to cover a
        let (p, q) = (normalize(&a, 0.0).unwrap(), normalize(&b, 0.0).unwrap());
        let (ps, qs) = (normalize(&scaled(&a), 0.0).unwrap(), normalize(&scaled(&b), 0.0).unwrap());
        prop_assert!(close(dist_hellinger(&p, &q).unwrap(), dist_hellinger(&ps, &qs).unwrap(), 1e-12));
        if a.iter().zip(&b).all(|(x, y)| *x == 0.0 || *y > 0.0) {
            prop_assert!(close(dist_kl(&p, &q).unwrap(), dist_kl(&ps, &qs).unwrap(), 1e-9));
        }
        let ed = dist_euclidean(&a, &b).unwrap();
        prop_assert!(close(dist_euclidean(&scaled(&a), &scaled(&b)).unwrap(), c * ed, 1e-12));
    }
}

#[test]
fn kl_rejects_uncovered_support() {
    assert!(dist_kl(&[0.5, 0.5], &[1.0, 0.0]).is_err());
}
