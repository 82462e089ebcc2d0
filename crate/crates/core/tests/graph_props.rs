mod common;

use common::{brute_force_int, random_connected_group, random_layout, random_matrix};
use layoutgroup_core::grouping::{hierarchical_group, is_coarsening, is_laminar, GroupingHierarchy, GroupingParams};
use layoutgroup_core::layout::BBox;
use layoutgroup_core::proximity::{build_graph, build_graph_with, distance, internal_distance, Neighborhood};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params_strategy() -> impl Strategy<Value = GroupingParams> {
    (0.3f64..1.0, 0.0f64..0.1, 0.5f64..0.99, 1.0f64..1.5).prop_map(|(t, tau, alpha, beta)| GroupingParams {
        t_initial: t,
        tau_initial: tau,
        alpha,
        beta,
        ..GroupingParams::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn proximity_graph_is_connected_and_canonical(n in 1usize..60, seed in any::<u64>()) {
        let l = random_layout(n, seed);
        for hood in [Neighborhood::Delaunay, Neighborhood::Knn(3)] {
            let g = build_graph_with(&l, hood);
            prop_assert!(g.is_connected());
            for w in g.edges.windows(2) {
                prop_assert!((w[0].a, w[0].b) < (w[1].a, w[1].b));
            }
            for e in &g.edges {
                prop_assert!(e.a < e.b && e.b < n);
                prop_assert_eq!(e.weight, distance(&g.boxes[e.a], &g.boxes[e.b]));
            }
        }
    }

    #[test]
    fn distance_is_symmetric_and_translation_invariant(
        a in (0.0f64..0.5, 0.0f64..0.5, 0.01f64..0.4, 0.01f64..0.4),
        b in (0.0f64..0.5, 0.0f64..0.5, 0.01f64..0.4, 0.01f64..0.4),
        k in -8i32..8,
    ) {
        let ba = BBox::new(a.0, a.1, a.0 + a.2, a.1 + a.3);
        let bb = BBox::new(b.0, b.1, b.0 + b.2, b.1 + b.3);
        let d = distance(&ba, &bb);
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d, distance(&bb, &ba));
        // dyadic shifts keep every coordinate difference exact
        let s = k as f64 / 16.0;
        let moved = distance(&ba.translate(s, -s), &bb.translate(s, -s));
        prop_assert!((moved - d).abs() < 1e-12);
    }

    #[test]
    fn internal_distance_matches_enumeration(n in 2usize..12, seed in any::<u64>()) {
        let l = random_layout(n, seed);
        let g = build_graph(&l);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..4 {
            let group = random_connected_group(&g, 6, &mut rng);
            prop_assert_eq!(Some(internal_distance(&group, &g).unwrap()), brute_force_int(&group, &g));
        }
    }

    #[test]
    fn hierarchies_are_laminar_strict_coarsenings(
        n in 1usize..50,
        seed in any::<u64>(),
        params in params_strategy(),
    ) {
        let l = random_layout(n, seed);
        let g = build_graph(&l);
        let h = hierarchical_group(&g, &random_matrix(n, seed ^ 1), &params).unwrap();
        prop_assert!(h.iterations <= params.max_iterations);
        prop_assert_eq!(h.levels[0].len(), n);
        prop_assert_eq!(h.levels.last().unwrap().len(), 1);
        prop_assert!(is_laminar(&h.levels));
        for w in h.levels.windows(2) {
            prop_assert!(is_coarsening(&w[0], &w[1]));
            prop_assert!(w[1].len() < w[0].len());
        }
        for k in 1..=h.num_levels() {
            let t = h.truncate(k).unwrap();
            prop_assert_eq!(t.num_levels(), k);
            prop_assert!(is_laminar(&t.levels));
        }
        let ids: Vec<String> = l.elements().iter().map(|e| e.id.clone()).collect();
        let back = GroupingHierarchy::from_json(&h.to_json(), &ids).unwrap();
        prop_assert_eq!(back.levels, h.levels);
    }
}

#[test]
fn disconnected_groups_are_rejected() {
    let l = random_layout(12, 4);
    let g = build_graph(&l);
    let adj = g.neighbors();
    // a vertex and some non-neighbor form a disconnected pair
    let far = (1..g.len()).find(|&v| !adj[0].contains(&v)).expect("sparse graph");
    assert!(internal_distance(&[0, far], &g).is_err());
}
