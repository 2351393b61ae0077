use metrovuln_core::ingest::Edge;
use metrovuln_core::NetworkGraph;
use proptest::prelude::*;

/// Random graph on `n` nodes; not necessarily connected.
fn graph() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
    (2usize..12).prop_flat_map(|n| {
        let edge = (0..n, 0..n, 0.1..20.0f64).prop_filter("no self loops", |(a, b, _)| a != b);
        (Just(n), prop::collection::vec(edge, 0..3 * n))
    })
}

fn build(n: usize, edges: &[(usize, usize, f64)]) -> NetworkGraph {
    let ids: Vec<String> = (0..n).map(|i| format!("S{i}")).collect();
    let e: Vec<Edge> =
        edges.iter().map(|&(a, b, w)| Edge { from: ids[a].clone(), to: ids[b].clone(), track_km: w }).collect();
    NetworkGraph::new(&ids, &e).unwrap()
}

proptest! {
    #[test]
    fn distances_form_a_metric((n, edges) in graph()) {
        let g = build(n, &edges);
        for a in 0..n {
            prop_assert_eq!(g.distance(a, a), Some(0.0));
            for b in 0..n {
                let ab = g.distance(a, b);
                prop_assert_eq!(ab, g.distance(b, a));
                if let Some(d) = ab {
                    prop_assert!(d >= 0.0);
                }
                for c in 0..n {
                    if let (Some(ab), Some(bc)) = (ab, g.distance(b, c)) {
                        let ac = g.distance(a, c);
                        prop_assert!(ac.is_some());
                        prop_assert!(ac.unwrap() <= ab + bc + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn no_path_is_shorter_than_its_direct_edge((n, edges) in graph()) {
        let g = build(n, &edges);
        for &(a, b, w) in &edges {
            prop_assert!(g.distance(a, b).unwrap() <= w);
        }
    }
}
