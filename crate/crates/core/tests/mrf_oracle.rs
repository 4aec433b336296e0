use rcpn_core::forest::{build_random_tree, MergePolicy, ParseTree};
use rcpn_core::gradcheck::random_graph;
use rcpn_core::mrf::{
    brute_force_decode, decode_leaf_labels, feasible_count, map_decode, MrfProblem, RetainedLabels,
    BRUTE_FORCE_LIMIT,
};
use rcpn_core::numeric::{softmax, Rng};

fn random_instance(
    rng: &mut Rng,
    max_leaves: usize,
    max_retained: usize,
) -> (ParseTree, Vec<Vec<f64>>, RetainedLabels) {
    let s = 1 + rng.below(max_leaves);
    let classes = 2 + rng.below(4);
    let g = random_graph(rng, s, 1, classes, 0.3, 0.0);
    let tree = build_random_tree(&g, rng, MergePolicy::Uniform).unwrap();
    let probs = (0..tree.node_count())
        .map(|_| {
            let z: Vec<f64> = (0..classes).map(|_| rng.normal() * 2.0).collect();
            softmax(&z)
        })
        .collect();
    let mut labels: Vec<usize> = (0..classes).collect();
    rng.shuffle(&mut labels);
    labels.truncate(1 + rng.below(max_retained.min(classes)));
    (tree, probs, RetainedLabels::new(labels).unwrap())
}

#[test]
fn exact_decoding_matches_exhaustive_search() {
    let mut rng = Rng::new(2024);
    for i in 0..300 {
        let (tree, probs, retained) = random_instance(&mut rng, 6, 4);
        let p = MrfProblem::new(&tree, &probs, retained.clone()).unwrap();
        let dp = map_decode(&p);
        let bf = brute_force_decode(&p, BRUTE_FORCE_LIMIT).unwrap();
        assert!(p.is_feasible(&dp.states), "instance {i}");
        assert!(
            (dp.energy - bf.energy).abs() <= 1e-9,
            "instance {i}: {} vs {}",
            dp.energy,
            bf.energy
        );
        assert!((p.energy(&dp.states) - dp.energy).abs() <= 1e-9);
        let s = tree.leaf_count();
        assert_eq!(
            decode_leaf_labels(&dp.states, s, &retained),
            decode_leaf_labels(&bf.states, s, &retained),
            "instance {i}"
        );
    }
}

#[test]
fn exact_ties_follow_the_shared_rule() {
    // uniform distributions make every feasible assignment with singleton
    // states everywhere optimal; both searches must pick the same one
    let mut rng = Rng::new(5);
    for _ in 0..30 {
        let (tree, mut probs, retained) = random_instance(&mut rng, 5, 3);
        let c = probs[0].len();
        for p in probs.iter_mut() {
            *p = vec![1.0 / c as f64; c];
        }
        let p = MrfProblem::new(&tree, &probs, retained).unwrap();
        let dp = map_decode(&p);
        let bf = brute_force_decode(&p, BRUTE_FORCE_LIMIT).unwrap();
        assert_eq!(dp.states, bf.states);
    }
}

#[test]
fn decoding_work_is_bounded_by_subset_pairs() {
    let mut rng = Rng::new(77);
    for _ in 0..50 {
        let (tree, probs, retained) = random_instance(&mut rng, 8, 5);
        let l = retained.len() as u32;
        let p = MrfProblem::new(&tree, &probs, retained).unwrap();
        let dp = map_decode(&p);
        // pairs (parent, child) with child a subset of parent: 3^L per edge
        let bound = 3usize.pow(l);
        for (node, &work) in dp.pair_evaluations.iter().enumerate() {
            if node == tree.root() {
                assert_eq!(work, 0);
            } else {
                assert!(work <= bound, "node {node}: {work} > {bound}");
            }
        }
        assert!(feasible_count(&p) >= 1.0);
    }
}

#[test]
fn adding_an_unlikely_label_never_lowers_the_unary() {
    use rcpn_core::mrf::{unary, NodeState};
    let mut rng = Rng::new(31);
    let retained = RetainedLabels::new((0..6).collect()).unwrap();
    let mut checked = 0;
    for _ in 0..2000 {
        let z: Vec<f64> = (0..6).map(|_| rng.normal() * 2.0).collect();
        let p = softmax(&z);
        let state = NodeState(1 + rng.below(63) as u16);
        let extra = rng.below(6);
        if state.contains(extra) {
            continue;
        }
        let log_geo = state.positions().map(|i| p[i].ln()).sum::<f64>() / state.len() as f64;
        if p[extra].ln() > log_geo {
            continue;
        }
        let grown = NodeState(state.0 | 1 << extra);
        assert!(unary(grown, &p, &retained) >= unary(state, &p, &retained) - 1e-15);
        checked += 1;
    }
    assert!(checked > 100);
}
