use std::io::Cursor;

use depara::evaluation::{
    hits_at_k, pr_curve, precision_at_k, recall_at_k, task_tree, RelevanceSet,
};
use depara::graph::{edge_count, raw_cosine_edges};
use depara::refnet::export_bundle_with;
use depara::similarity::{graph_similarity, node_similarity};
use depara::stats::spearman;
use depara::synthbench::{
    generate_family, generate_family_with, monotonicity_harness, FamilyParams, Nuisance,
};
use depara::transferability::{all_pairs_matrix_with, RankDirection, ScoreMatrix};
use depara::{
    build_graph, edge_index, read_bundle, write_bundle, BundleIds, Exec, KnowledgePool, LayerTap,
    ProbeBundle, RankingTable,
};
use proptest::prelude::*;

fn bundle_strategy() -> impl Strategy<Value = ProbeBundle> {
    (2usize..9, 1usize..5, 1usize..5).prop_flat_map(|(n, de, di)| {
        (
            prop::collection::vec(-100.0f32..100.0, n * de),
            prop::collection::vec(-100.0f32..100.0, n * di),
        )
            .prop_map(move |(e, a)| {
                ProbeBundle::new(BundleIds::new("m", "l", "p"), n, de, di, e, a).unwrap()
            })
    })
}

/// Rows kept away from zero so every cosine is defined.
fn nonzero_bundle(n: usize, de: usize, di: usize) -> impl Strategy<Value = ProbeBundle> {
    let row = |d: usize| {
        prop::collection::vec(0.5f32..2.0, d).prop_flat_map(move |mags| {
            prop::collection::vec(any::<bool>(), mags.len()).prop_map(move |signs| {
                mags.iter()
                    .zip(&signs)
                    .map(|(m, s)| if *s { *m } else { -m })
                    .collect::<Vec<f32>>()
            })
        })
    };
    (
        prop::collection::vec(row(de), n),
        prop::collection::vec(row(di), n),
    )
        .prop_map(move |(e, a)| {
            ProbeBundle::new(
                BundleIds::new("m", "l", "p"),
                n,
                de,
                di,
                e.concat(),
                a.concat(),
            )
            .unwrap()
        })
}

fn permute(b: &ProbeBundle, perm: &[usize]) -> ProbeBundle {
    let e = perm.iter().flat_map(|&k| b.embedding(k).to_vec()).collect();
    let a = perm
        .iter()
        .flat_map(|&k| b.attribution(k).to_vec())
        .collect();
    ProbeBundle::new(b.ids().clone(), b.n(), b.d_embed(), b.d_input(), e, a).unwrap()
}

fn ranking(scores: &[f64]) -> RankingTable {
    let values = scores
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("c{i}"), *s))
        .collect();
    RankingTable::from_values("t", RankDirection::DescendingByScore, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bundle_round_trip(b in bundle_strategy()) {
        let mut bytes = Vec::new();
        write_bundle(&b, &mut bytes).unwrap();
        prop_assert_eq!(read_bundle(&mut Cursor::new(bytes)).unwrap(), b);
    }

    #[test]
    fn edge_index_is_bijective(n in 2usize..60) {
        let mut seen = vec![false; edge_count(n)];
        for p in 0..n {
            prop_assert!(edge_index(p, p, n).is_err());
            for q in (p + 1)..n {
                let k = edge_index(p, q, n).unwrap();
                prop_assert!(!seen[k]);
                seen[k] = true;
                prop_assert!(edge_index(q, p, n).is_err());
            }
        }
        prop_assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn graph_permutation_equivariant(
        (b, perm) in (3usize..10).prop_flat_map(|n| (nonzero_bundle(n, 3, 2), Just((0..n).collect::<Vec<_>>()).prop_shuffle()))
    ) {
        let g = build_graph(&b).unwrap();
        let h = build_graph(&permute(&b, &perm)).unwrap();
        let n = b.n();
        for i in 0..n {
            prop_assert_eq!(h.node(i), g.node(perm[i]));
            for j in (i + 1)..n {
                let (p, q) = (perm[i].min(perm[j]), perm[i].max(perm[j]));
                prop_assert_eq!(h.edge(i, j).unwrap(), g.edge(p, q).unwrap());
            }
        }
    }

    #[test]
    fn raw_cosines_near_unit_interval(b in nonzero_bundle(6, 4, 1), dup in 0usize..6) {
        let mut rows: Vec<f64> = b.embeddings().iter().map(|&v| f64::from(v)).collect();
        // a duplicated row makes one cosine sit right at the boundary
        let copy: Vec<f64> = rows[dup * 4..dup * 4 + 4].to_vec();
        rows.extend(copy);
        let edges = raw_cosine_edges(&rows, 7, 4, Exec::Sequential).unwrap();
        let bound = 1.0 + 4.0 * f64::EPSILON;
        prop_assert!(edges.iter().all(|e| e.abs() <= bound));
        prop_assert!(edges[edge_index(dup, 6, 7).unwrap()] >= 1.0 - 4.0 * f64::EPSILON);
    }

    #[test]
    fn spearman_symmetric_and_bounded(
        pairs in prop::collection::vec((-5i32..5, -5i32..5), 3..40)
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let b: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        match (spearman(&a, &b, "x"), spearman(&b, &a, "x")) {
            (Ok(r), Ok(s)) => {
                prop_assert_eq!(r, s);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
            (Err(_), Err(_)) => {}
            other => prop_assert!(false, "asymmetric outcome {:?}", other),
        }
    }

    #[test]
    fn ranking_invariant_under_monotone_map(raw in prop::collection::vec(-20i32..20, 1..30)) {
        let scores: Vec<f64> = raw.iter().map(|v| f64::from(*v) / 4.0).collect();
        let exp: Vec<f64> = scores.iter().map(|v| v.exp()).collect();
        let (r, e) = (ranking(&scores), ranking(&exp));
        prop_assert_eq!(r.order(), e.order());
        let ranks = |t: &RankingTable| t.entries.iter().map(|x| x.rank).collect::<Vec<_>>();
        prop_assert_eq!(ranks(&r), ranks(&e));
    }

    #[test]
    fn dominated_candidate_keeps_order(raw in prop::collection::vec(-20i32..20, 1..30)) {
        let scores: Vec<f64> = raw.iter().map(|v| f64::from(*v)).collect();
        let before = ranking(&scores);
        let mut more = scores.clone();
        more.push(-100.0);
        let after = ranking(&more);
        let last = format!("c{}", scores.len());
        prop_assert_eq!(after.rank_of(&last), Some(more.len()));
        let kept: Vec<&str> = after.order().into_iter().filter(|id| *id != last).collect();
        prop_assert_eq!(kept, before.order());
    }

    #[test]
    fn precision_recall_identities(
        scores in prop::collection::vec(-10i32..10, 2..20),
        mask in prop::collection::vec(any::<bool>(), 20),
        k_frac in 0.0f64..1.0,
    ) {
        let t = ranking(&scores.iter().map(|v| f64::from(*v)).collect::<Vec<_>>());
        let n = scores.len();
        let mut rel_ids: Vec<String> = (0..n).filter(|i| mask[*i]).map(|i| format!("c{i}")).collect();
        if rel_ids.is_empty() {
            rel_ids.push("c0".into());
        }
        let rel = RelevanceSet::new("t", rel_ids.clone()).unwrap();
        let k = 1 + (k_frac * n as f64) as usize % n;
        let p = precision_at_k(&t, &rel, k).unwrap();
        let r = recall_at_k(&t, &rel, k).unwrap();
        prop_assert!((p * k as f64 - r * rel.len() as f64).abs() < 1e-12);
        prop_assert_eq!(hits_at_k(&t, &rel, k).unwrap() as f64, (p * k as f64).round());

        // relabel every id consistently
        let mut renamed = t.clone();
        for e in &mut renamed.entries {
            e.candidate_id = format!("x-{}", e.candidate_id);
        }
        let rel2 = RelevanceSet::new("t", rel_ids.iter().map(|id| format!("x-{id}"))).unwrap();
        prop_assert_eq!(precision_at_k(&renamed, &rel2, k).unwrap(), p);

        let curve = pr_curve(&[t], &[rel]).unwrap();
        prop_assert_eq!(curve.points.len(), n);
        prop_assert!(curve.points.windows(2).all(|w| w[0].recall <= w[1].recall));
        prop_assert_eq!(curve.points[n - 1].recall, 1.0);
    }

    #[test]
    fn task_tree_permutation_invariant(
        (levels, perm) in (2usize..8).prop_flat_map(|n| (
            prop::collection::vec(0u8..4, n * (n - 1) / 2),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        ))
    ) {
        // few distinct levels, so distance ties are common
        let n = perm.len();
        let lambda = 1.0;
        let score = |i: usize, j: usize| -> f64 {
            if i == j {
                return 1.0 + lambda;
            }
            let (p, q) = (i.min(j), i.max(j));
            f64::from(levels[edge_index(p, q, n).unwrap()]) / 2.0
        };
        let build = |order: &[usize]| {
            let ids = order.iter().map(|k| format!("t{k}")).collect();
            let values = order.iter().flat_map(|&i| order.iter().map(move |&j| score(i, j))).collect();
            task_tree(&ScoreMatrix::new(ids, lambda, values).unwrap()).unwrap()
        };
        let identity: Vec<usize> = (0..n).collect();
        let (a, b) = (build(&identity), build(&perm));
        prop_assert_eq!(a.to_newick(), b.to_newick());
        prop_assert!(a.merges.windows(2).all(|w| w[0].height <= w[1].height));
        prop_assert_eq!(a.merges.last().unwrap().size, n);
    }

    #[test]
    fn power_of_two_rescaling_is_exact(b in nonzero_bundle(6, 3, 4), ke in -8i32..8, ka in -8i32..8) {
        let fe = 2f32.powi(ke);
        let fa = 2f32.powi(ka);
        let scaled = ProbeBundle::new(
            b.ids().clone(), b.n(), b.d_embed(), b.d_input(),
            b.embeddings().iter().map(|v| v * fe).collect(),
            b.attributions().iter().map(|v| v * fa).collect(),
        ).unwrap();
        let (g, h) = (build_graph(&b).unwrap(), build_graph(&scaled).unwrap());
        prop_assert_eq!(g.edges(), h.edges());
        prop_assert_eq!(node_similarity(&g, &h).unwrap(), 1.0);
        prop_assert_eq!(graph_similarity(&g, &h, 2.5).unwrap().score, 3.5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rotation_nuisance_is_invisible(seed in 0u64..1000, angle in 0.1f64..3.0) {
        let params = FamilyParams::new(seed, 12, 4, 16);
        let family = generate_family_with(params, &[
            Nuisance { rotation_angle: angle, noise_sigma: 0.0 },
            Nuisance { rotation_angle: -angle, noise_sigma: 0.0 },
        ]).unwrap();
        for point in monotonicity_harness(&family, 1.0).unwrap() {
            prop_assert!((point.score - 2.0).abs() < 1e-6, "{}", point.score);
        }
    }

    #[test]
    fn synth_families_are_deterministic(seed in any::<u64>()) {
        let params = FamilyParams::new(seed, 6, 3, 5);
        let a = generate_family(params, &[0.0, 0.1]).unwrap();
        let b = generate_family(params, &[0.0, 0.1]).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sequential_and_parallel_agree(seed in 0u64..1000) {
        let family = generate_family(FamilyParams::new(seed, 10, 4, 12), &[0.0, 0.1, 0.5]).unwrap();
        let tap = LayerTap::new(1).unwrap();
        let mut pool = KnowledgePool::new();
        for v in &family.variants {
            let ids = BundleIds::new(v.variant_id.clone(), "tap-1", "p");
            let seq = export_bundle_with(&v.net, &family.probe, tap, ids.clone(), Exec::Sequential).unwrap();
            let par = export_bundle_with(&v.net, &family.probe, tap, ids, Exec::Parallel).unwrap();
            prop_assert_eq!(&seq, &par);
            let g = depara::graph::build_graph_with(&seq, Exec::Sequential).unwrap();
            prop_assert_eq!(&g, &depara::graph::build_graph_with(&seq, Exec::Parallel).unwrap());
            pool.push(v.variant_id.clone(), g).unwrap();
        }
        prop_assert_eq!(
            all_pairs_matrix_with(&pool, 1.0, Exec::Sequential).unwrap(),
            all_pairs_matrix_with(&pool, 1.0, Exec::Parallel).unwrap()
        );
    }
}
