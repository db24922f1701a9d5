use num_traits::{One, Zero};
use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;
use temperley::doob::{potential_column_field, verify_partition_equality, DoobWindow};
use temperley::elliptic::{mass_value, EllipticModulus};
use temperley::graph::{cemetery_extension, enumerate_forests};
use temperley::linalg::{edge_probability, partition_function, potential};
use temperley::nearcrit::{arc_of, total_variation, Domain, ARCS};
use temperley::par::{run_chunked, task_rng, Exec};
use temperley::periodic::{charpoly, eval_charpoly, random_periodic, random_points};
use temperley::scalar::{q, q_to_f64, Q};
use temperley::walks::{loop_erase, wilson, WalkTable};
use temperley::WeightedGraph;

/// (n, pairs as (a, b, num, den), masses as (num, den)); connected through a random tree.
fn graph_q() -> impl Strategy<Value = WeightedGraph<Q>> {
    (1usize..=5)
        .prop_flat_map(|n| {
            let tree = prop::collection::vec((any::<prop::sample::Index>(), 1i64..5, 1i64..4), n - 1);
            let extra = prop::collection::vec((0..n, 0..n, 1i64..5, 1i64..4), 0..3);
            let mass = prop::collection::vec((0i64..4, 1i64..3), n);
            (Just(n), tree, extra, mass)
        })
        .prop_map(|(n, tree, extra, mass)| {
            let mut pairs: Vec<(usize, usize, Q)> =
                tree.iter().enumerate().map(|(v, (p, a, b))| (p.index(v + 1), v + 1, q(*a, *b))).collect();
            pairs.extend(extra.into_iter().map(|(a, b, c, d)| (a, b, q(c, d))));
            let mut m: Vec<Q> = mass.into_iter().map(|(a, b)| q(a, b)).collect();
            if m.iter().all(|x| x.is_zero()) {
                m[0] = Q::one();
            }
            WeightedGraph::symmetric(n, &pairs, m).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forest_sum_is_determinant(g in graph_q()) {
        let z = enumerate_forests(&g, 6).unwrap().into_iter().fold(Q::zero(), |a, (_, w)| a + w);
        prop_assert_eq!(z, partition_function(&g));
    }

    #[test]
    fn edge_marginals_sum_to_vertex_count(g in graph_q()) {
        // a spanning tree of the cemetery graph has exactly n edges
        let gp = cemetery_extension(&g);
        let p = potential(&g).unwrap();
        let total = (0..gp.edges.len()).fold(Q::zero(), |a, e| a + edge_probability(&gp, &p, &[e]).unwrap());
        prop_assert_eq!(total, q(g.n() as i64, 1));
    }

    #[test]
    fn edge_probabilities_lie_in_unit_interval(g in graph_q()) {
        let gp = cemetery_extension(&g);
        let p = potential(&g).unwrap();
        for e in 0..gp.edges.len() {
            let pe = edge_probability(&gp, &p, &[e]).unwrap();
            prop_assert!(pe >= Q::zero() && pe <= Q::one());
        }
    }

    #[test]
    fn doob_equality_for_potential_columns(g in graph_q(), pick in any::<prop::sample::Index>(), k in 1usize..4) {
        prop_assume!(g.n() >= 2 && g.edges().iter().all(|e| !e.is_loop()));
        let z = pick.index(g.n());
        // connected window grown from a neighbour of z
        let mut subset = vec![g.edge(g.out_edges(z)[0]).to];
        prop_assume!(subset[0] != z);
        let mut i = 0;
        while subset.len() < k && i < subset.len() {
            for &e in g.out_edges(subset[i]) {
                let y = g.edge(e).to;
                if y != z && !subset.contains(&y) && subset.len() < k {
                    subset.push(y);
                }
            }
            i += 1;
        }
        let lambda = potential_column_field(&g, z).unwrap();
        let c = verify_partition_equality(&g, &subset, &lambda).unwrap();
        prop_assert_eq!(c.z_rsf, c.z_rst_o);
        let lf: Vec<f64> = lambda.iter().map(q_to_f64).collect();
        let w = DoobWindow::new(&g.to_f64(), &subset, &lf).unwrap();
        prop_assert!(w.gauge_deviation() < 1e-10);
    }

    #[test]
    fn wilson_output_is_acyclic(g in graph_q(), seed in any::<u64>()) {
        let gf = g.to_f64();
        let t = WalkTable::new(&gf);
        let order: Vec<usize> = (0..gf.n()).collect();
        let f = wilson(&t, &order, &mut task_rng(seed, 0)).unwrap();
        prop_assert!(f.is_acyclic(&gf));
        prop_assert!(!f.roots().is_empty());
    }

    #[test]
    fn loop_erasure_is_self_avoiding(path in prop::collection::vec(0usize..6, 1..40)) {
        let l = loop_erase(&path);
        let mut seen = l.clone();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), l.len());
        prop_assert_eq!(l.first(), path.first());
        prop_assert_eq!(l.last(), path.last());
    }

    #[test]
    fn legendre_relation(k in 0.01f64..0.99) {
        prop_assert!(EllipticModulus::new(k).unwrap().legendre_defect().abs() < 1e-12);
    }

    #[test]
    fn mass_is_positive_and_zero_at_criticality(k in 0.05f64..0.9, a in 0.2f64..1.35) {
        let h = [a, std::f64::consts::FRAC_PI_2 - a, a, std::f64::consts::FRAC_PI_2 - a];
        let m = EllipticModulus::new(k).unwrap();
        prop_assert!(mass_value(&m, &h).unwrap() > 0.0);
        prop_assert!(mass_value(&EllipticModulus::new(0.0).unwrap(), &h).unwrap().abs() < 1e-12);
    }

    #[test]
    fn chunked_streams_ignore_execution_mode(n in 1usize..3000, seed in any::<u64>()) {
        use rand::Rng;
        let f = |rng: &mut ChaCha8Rng, _: usize, count: usize| (0..count).map(|_| rng.random::<u32>()).collect::<Vec<_>>();
        prop_assert_eq!(run_chunked(n, seed, Exec::Sequential, f), run_chunked(n, seed, Exec::Parallel, f));
    }

    #[test]
    fn total_variation_is_a_metric(a in prop::collection::vec(0.0f64..1.0, ARCS), b in prop::collection::vec(0.0f64..1.0, ARCS)) {
        let tv = total_variation(&a, &b);
        prop_assert!(tv >= 0.0);
        prop_assert!((tv - total_variation(&b, &a)).abs() < 1e-15);
        prop_assert!(total_variation(&a, &a) < 1e-15);
    }

    #[test]
    fn disk_crossing_lands_on_circle(x in -0.9f64..0.9, t in 0.0f64..std::f64::consts::TAU) {
        let d = Domain::unit_disk();
        let a = [x * 0.7, 0.0];
        let b = [2.0 * t.cos(), 2.0 * t.sin()];
        let c = d.crossing(a, b);
        prop_assert!(((c[0] * c[0] + c[1] * c[1]).sqrt() - 1.0).abs() < 1e-9);
        prop_assert!(arc_of(c, [0.0, 0.0]) < ARCS);
    }
}

#[test]
fn charpoly_matches_direct_determinant() {
    for seed in 0..4 {
        let pg = random_periodic(1 + seed as usize % 2, seed);
        let p = charpoly(&pg, Exec::default()).unwrap();
        for (z, w) in random_points(5, seed) {
            let direct = eval_charpoly(&pg, z, w).unwrap();
            assert!((p.eval(z, w) - direct).norm() <= 1e-8 * direct.norm().max(1.0));
        }
    }
}
