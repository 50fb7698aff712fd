//! Property suites over the engine and the algebra.

use std::sync::Arc;

use proptest::prelude::*;
use relwidth_core::algebra::{
    self, close_cyclic, find_polymorphism, linkedness_congruence, CyclicRelation,
    PolymorphismSpec, DEFAULT_CAP,
};
use relwidth_core::atlas::{builtin, PatternAtlas};
use relwidth_core::combi::{permutations, subsets};
use relwidth_core::engine::{establish_minimality, gen_random_instance, normalize};
use relwidth_core::reduction::{self, SolveMode, Verdict};

fn atlases() -> Vec<Arc<PatternAtlas>> {
    vec![
        Arc::new(builtin::equality_atlas()),
        Arc::new(builtin::equivalence_atlas()),
        Arc::new(builtin::henson_atlas(3)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Restrictions of realizable patterns stay realizable, and the
    /// enumeration is closed under point permutation.
    #[test]
    fn pattern_hereditarity_and_symmetry(which in 0usize..3, n in 2usize..5, pick in any::<prop::sample::Index>(), perm_pick in any::<prop::sample::Index>()) {
        let atlas = &atlases()[which];
        let all = atlas.enumerate(n).unwrap();
        let p = &all[pick.index(all.len())];
        for m in 1..=n {
            for s in subsets(n, m) {
                prop_assert!(atlas.realizable(&p.restrict(&s)));
            }
        }
        let perms = permutations(n);
        let perm = &perms[perm_pick.index(perms.len())];
        let q = atlas.permuted(p, perm);
        prop_assert!(all.binary_search(&q).is_ok());
    }

    /// Minimization is idempotent and only ever shrinks allowed sets.
    #[test]
    fn minimization_idempotent_and_monotone(which in 0usize..3, n in 3usize..7, m in 2usize..8, seed in 0u64..10_000) {
        let atlas = &atlases()[which];
        let raw = gen_random_instance(atlas, n, m, seed, None).unwrap();
        let (inst, _) = normalize(atlas, &raw).unwrap();
        let once = establish_minimality(&inst, 2, 3).unwrap();
        let twice = establish_minimality(&once, 2, 3).unwrap();
        prop_assert_eq!(&once, &twice);
        for k in once.constraints() {
            if k.origin == relwidth_core::engine::ConstraintOrigin::Top {
                continue;
            }
            let shrank_from_source = inst.constraints().iter().any(|c| {
                c.scope == k.scope
                    && c.origin == k.origin
                    && k.allowed.iter().all(|p| c.allowed.binary_search(p).is_ok())
            });
            prop_assert!(shrank_from_source);
        }
    }

    /// Satisfiability verdicts are stable across the two solve modes.
    #[test]
    fn solve_modes_agree(which in 0usize..3, n in 3usize..6, m in 2usize..7, seed in 0u64..5_000) {
        let atlas = &atlases()[which];
        let raw = gen_random_instance(atlas, n, m, seed, None).unwrap();
        let (inst, _) = normalize(atlas, &raw).unwrap();
        let ts = reduction::solve(&inst, SolveMode::Ts, None).unwrap();
        let wnu = reduction::solve(&inst, SolveMode::Wnu, None).unwrap();
        let sat = |v: &Verdict| matches!(v, Verdict::Sat(_));
        prop_assert_eq!(sat(&ts.verdict), sat(&wnu.verdict));
        if let Verdict::Sat(w) = &ts.verdict {
            prop_assert!(reduction::verify_witness(&ts.minimized, w).is_ok());
        }
    }

    /// The linkedness congruence matches a direct breadth-first search on the
    /// prefix incidence graph.
    #[test]
    fn linkedness_matches_bfs(arity in 2usize..5, tuples in prop::collection::vec(prop::collection::vec(0u8..3, 4), 1..6)) {
        let tuples: Vec<Vec<u8>> = tuples.into_iter().map(|t| t[..arity].to_vec()).collect();
        let r = CyclicRelation::new(arity, 3, tuples);
        let blocks = linkedness_congruence(&r);
        // BFS oracle
        let support = r.support();
        let mut reach: Vec<Vec<bool>> = vec![vec![false; support.len()]; support.len()];
        for (i, &a) in support.iter().enumerate() {
            let mut frontier = vec![a];
            reach[i][i] = true;
            while let Some(v) = frontier.pop() {
                for t in r.tuples() {
                    if *t.last().unwrap() != v {
                        continue;
                    }
                    let prefix = &t[..arity - 1];
                    for t2 in r.tuples() {
                        if &t2[..arity - 1] == prefix {
                            let w = *t2.last().unwrap();
                            let wi = support.binary_search(&w).unwrap();
                            if !reach[i][wi] {
                                reach[i][wi] = true;
                                frontier.push(w);
                            }
                        }
                    }
                }
            }
        }
        for (i, &a) in support.iter().enumerate() {
            for (j, &b) in support.iter().enumerate() {
                let same_block = blocks.iter().any(|blk| blk.contains(&a) && blk.contains(&b));
                prop_assert_eq!(same_block, reach[i][j], "{} vs {}", a, b);
            }
        }
    }

    /// Cyclic closures are fixpoints: closing again changes nothing, and the
    /// result is shift- and generator-closed.
    #[test]
    fn closure_is_a_fixpoint(arity in 2usize..4, seeds in prop::collection::vec(prop::collection::vec(0u8..2, 3), 1..4)) {
        let maj = find_polymorphism(
            &algebra::fixtures::k2().with_singletons(),
            &PolymorphismSpec::Wnu,
            3,
        )
        .unwrap()
        .unwrap();
        let seeds: Vec<Vec<u8>> = seeds.into_iter().map(|t| t[..arity].to_vec()).collect();
        let closed = close_cyclic(&seeds, std::slice::from_ref(&maj), 2, arity, DEFAULT_CAP).unwrap();
        let again = close_cyclic(closed.tuples(), &[maj], 2, arity, DEFAULT_CAP).unwrap();
        prop_assert_eq!(&again, &closed);
        prop_assert!(closed.is_shift_closed());
    }
}

/// Brute-force equality of solution sets under minimization, on one seeded
/// batch per atlas (the full sweep lives in the verification suite).
#[test]
fn solution_sets_survive_minimization() {
    for atlas in atlases() {
        for seed in [3u64, 5, 8] {
            let raw = gen_random_instance(&atlas, 5, 4, seed, None).unwrap();
            let (inst, _) = normalize(&atlas, &raw).unwrap();
            let min = establish_minimality(&inst, 2, 3).unwrap();
            let all = atlas.enumerate(5).unwrap();
            let solutions = |inst: &relwidth_core::engine::Instance| -> Vec<usize> {
                all.iter()
                    .enumerate()
                    .filter(|(_, p)| {
                        inst.constraints().iter().all(|c| {
                            c.allowed.binary_search(&p.restrict(&c.scope)).is_ok()
                        })
                    })
                    .map(|(i, _)| i)
                    .collect()
            };
            assert_eq!(solutions(&inst), solutions(&min), "{} seed {seed}", atlas.name());
        }
    }
}
