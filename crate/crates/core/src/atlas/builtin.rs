//! Builtin template families.
//!
//! Every constructor returns a validated atlas. The width parameters record
//! the relational width assigned to the family; the solve pipeline derives
//! its minimality levels from `k` and `ell` directly.

use super::{AtlasBuilder, AtlasError, BlockKind, Family, ForbiddenKind, Pattern, PatternAtlas};

fn strs(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn pair_pattern(u0: u16, u1: u16, l: u16) -> Pattern {
    Pattern::from_labels(2, vec![vec![u0, u1], vec![l]]).expect("pair pattern")
}

/// The template of pure equality: one point class, pair labels `eq`, `neq`.
pub fn equality_atlas() -> PatternAtlas {
    let eq = 0u16;
    let neq = 1u16;
    let eq3 = Pattern::from_labels(3, vec![vec![0, 0, 0], vec![eq, eq, eq]]).unwrap();
    let diff3 = Pattern::from_labels(3, vec![vec![0, 0, 0], vec![neq, neq, neq]]).unwrap();
    AtlasBuilder::new("equality", 2, 3)
        .labels(vec![strs(&["pt"]), strs(&["eq", "neq"])])
        .tables_k2(vec![0, 0], vec![0, 0], vec![eq], vec![eq, neq])
        .relation("eq", vec![0, 1], vec![pair_pattern(0, 0, eq)])
        .relation("neq", vec![0, 1], vec![pair_pattern(0, 0, neq)])
        .relation("eq3", vec![0, 1, 2], vec![eq3])
        .relation("alldiff3", vec![0, 1, 2], vec![diff3])
        .family(Family::Equality)
        .width_params((2, 3))
        .finish()
        .expect("builtin equality atlas")
}

/// Countable equivalence relation with infinitely many infinite classes.
/// Pair labels: `eq` (equal points), `same` (same class, distinct), `other`.
pub fn equivalence_atlas() -> PatternAtlas {
    let (eq, same, other) = (0u16, 1u16, 2u16);
    // same-class must be transitive on distinct points
    let bad = Pattern::from_labels(3, vec![vec![0, 0, 0], vec![same, same, other]]).unwrap();
    AtlasBuilder::new("equivalence", 2, 3)
        .labels(vec![strs(&["pt"]), strs(&["eq", "same", "other"])])
        .tables_k2(vec![0, 0, 0], vec![0, 0, 0], vec![eq], vec![eq, same, other])
        .forbid(bad, ForbiddenKind::Substructure)
        .relation(
            "eqv",
            vec![0, 1],
            vec![pair_pattern(0, 0, eq), pair_pattern(0, 0, same)],
        )
        .relation("neqv", vec![0, 1], vec![pair_pattern(0, 0, other)])
        .relation("eq", vec![0, 1], vec![pair_pattern(0, 0, eq)])
        .relation(
            "neq",
            vec![0, 1],
            vec![pair_pattern(0, 0, same), pair_pattern(0, 0, other)],
        )
        .family(Family::Equivalence)
        .width_params((2, 3))
        .finish()
        .expect("builtin equivalence atlas")
}

/// The universal homogeneous graph with no clique of size `n` (`n >= 3`).
pub fn henson_atlas(n: usize) -> PatternAtlas {
    assert!(n >= 3, "Henson graphs start at clique bound 3");
    let edge = 1u16;
    let clique = Pattern::from_labels(
        n,
        vec![
            vec![0; n],
            vec![edge; n * (n - 1) / 2],
        ],
    )
    .unwrap();
    AtlasBuilder::new(&format!("henson{n}"), 2, n)
        .labels(vec![strs(&["pt"]), strs(&["eq", "edge", "none"])])
        .tables_k2(vec![0, 0, 0], vec![0, 0, 0], vec![0], vec![0, 1, 2])
        .forbid(clique, ForbiddenKind::Substructure)
        .relation("E", vec![0, 1], vec![pair_pattern(0, 0, 1)])
        .relation("N", vec![0, 1], vec![pair_pattern(0, 0, 2)])
        .family(Family::Henson(n))
        .width_params((2, n))
        .finish()
        .expect("builtin Henson atlas")
}

/// The universal homogeneous graph with edge, non-edge, and equality labels.
pub fn random_graph_atlas() -> PatternAtlas {
    random_graph_core("random_graph", Family::RandomGraph)
        .finish()
        .expect("builtin random graph atlas")
}

fn random_graph_core(name: &str, family: Family) -> AtlasBuilder {
    AtlasBuilder::new(name, 2, 3)
        .labels(vec![strs(&["pt"]), strs(&["eq", "edge", "none"])])
        .tables_k2(vec![0, 0, 0], vec![0, 0, 0], vec![0], vec![0, 1, 2])
        .relation("E", vec![0, 1], vec![pair_pattern(0, 0, 1)])
        .relation("N", vec![0, 1], vec![pair_pattern(0, 0, 2)])
        .relation("eq", vec![0, 1], vec![pair_pattern(0, 0, 0)])
        .family(family)
        .width_params((4, 6))
}

/// The four-ary reduct of the random graph with the pair-agreement relations:
/// `Req(a,b,c,d)` holds when the pairs `(a,b)` and `(c,d)` carry the same
/// edge/non-edge label, `Rneq` when they carry opposite labels.
pub fn random_graph_fourary_atlas() -> PatternAtlas {
    let base = random_graph_core("random_graph_fourary", Family::RandomGraphFourary)
        .finish()
        .expect("four-ary base");
    let four = base.enumerate(4).expect("4-point pattern enumeration");
    let (edge, none) = (1u16, 2u16);
    let matching = |p: &Pattern, same: bool| {
        let a = p.pair(0, 1);
        let b = p.pair(2, 3);
        let both_ok = (a == edge || a == none) && (b == edge || b == none);
        both_ok && ((a == b) == same)
    };
    let req: Vec<Pattern> = four.iter().filter(|p| matching(p, true)).cloned().collect();
    let rneq: Vec<Pattern> = four.iter().filter(|p| matching(p, false)).cloned().collect();
    random_graph_core("random_graph_fourary", Family::RandomGraphFourary)
        .relation("Req", vec![0, 1, 2, 3], req)
        .relation("Rneq", vec![0, 1, 2, 3], rneq)
        .finish()
        .expect("builtin four-ary atlas")
}

/// A stabilized partition: each block is declared singleton or infinite.
/// Unary labels name the blocks; pair labels record block membership and
/// equality.
#[allow(clippy::needless_range_loop)]
pub fn partition_atlas(blocks: &[BlockKind]) -> PatternAtlas {
    assert!(!blocks.is_empty());
    let r = blocks.len();
    let unary: Vec<String> = (1..=r).map(|i| format!("V{i}")).collect();
    // diag labels first, then ordered distinct-pair labels
    let mut pair_names = Vec::new();
    for i in 1..=r {
        pair_names.push(format!("eq{i}"));
    }
    for i in 1..=r {
        for j in 1..=r {
            pair_names.push(format!("n{i}{j}"));
        }
    }
    let diag = |i: usize| i as u16;
    let dist = |i: usize, j: usize| (r + i * r + j) as u16;
    let n2 = r + r * r;
    let mut proj0 = vec![0u16; n2];
    let mut proj1 = vec![0u16; n2];
    let mut swap = vec![0u16; n2];
    for i in 0..r {
        proj0[diag(i) as usize] = i as u16;
        proj1[diag(i) as usize] = i as u16;
        swap[diag(i) as usize] = diag(i);
        for j in 0..r {
            proj0[dist(i, j) as usize] = i as u16;
            proj1[dist(i, j) as usize] = j as u16;
            swap[dist(i, j) as usize] = dist(j, i);
        }
    }
    let double: Vec<u16> = (0..r).map(&diag).collect();

    let mut b = AtlasBuilder::new("partition", 2, 3)
        .labels(vec![unary, pair_names])
        .tables_k2(proj0, proj1, double, swap)
        .family(Family::Partition(blocks.to_vec()))
        .width_params((4, 6));
    for (i, kind) in blocks.iter().enumerate() {
        if *kind == BlockKind::Singleton {
            // two distinct points cannot share a singleton block
            let p = Pattern::from_labels(
                2,
                vec![vec![i as u16, i as u16], vec![dist(i, i)]],
            )
            .unwrap();
            b = b.forbid(p, ForbiddenKind::Substructure);
        }
    }
    for i in 0..r {
        b = b.relation(
            &format!("block{}", i + 1),
            vec![0],
            vec![Pattern::point(i as u16)],
        );
    }
    let eq_allowed: Vec<Pattern> = (0..r)
        .map(|i| pair_pattern(i as u16, i as u16, diag(i)))
        .collect();
    let mut neq_allowed = Vec::new();
    for i in 0..r {
        for j in 0..r {
            if i == j && blocks[i] == BlockKind::Singleton {
                continue;
            }
            neq_allowed.push(pair_pattern(i as u16, j as u16, dist(i, j)));
        }
    }
    b.relation("eq", vec![0, 1], eq_allowed)
        .relation("neq", vec![0, 1], neq_allowed)
        .finish()
        .expect("builtin partition atlas")
}

/// Looks a builtin atlas up by the names accepted on the command line.
pub fn by_name(name: &str) -> Result<PatternAtlas, AtlasError> {
    match name {
        "equality" => Ok(equality_atlas()),
        "equivalence" => Ok(equivalence_atlas()),
        "random-graph" | "random_graph" => Ok(random_graph_atlas()),
        "random-graph-fourary" | "random_graph_fourary" => Ok(random_graph_fourary_atlas()),
        _ => {
            if let Some(n) = name.strip_prefix("henson") {
                let n: usize = n
                    .parse()
                    .map_err(|_| AtlasError::Format(format!("bad Henson bound in `{name}`")))?;
                if n < 3 {
                    return Err(AtlasError::Format("Henson bound must be >= 3".into()));
                }
                return Ok(henson_atlas(n));
            }
            if let Some(spec) = name.strip_prefix("partition:") {
                let blocks: Result<Vec<BlockKind>, AtlasError> = spec
                    .split(',')
                    .map(|tok| match tok.trim() {
                        "1" => Ok(BlockKind::Singleton),
                        "inf" | "w" | "*" => Ok(BlockKind::Infinite),
                        other => Err(AtlasError::Format(format!(
                            "partition block must be `1` or `inf`, got `{other}`"
                        ))),
                    })
                    .collect();
                return Ok(partition_atlas(&blocks?));
            }
            Err(AtlasError::Format(format!("unknown builtin atlas `{name}`")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::Pattern;

    #[test]
    fn builtins_validate() {
        for atlas in [
            equality_atlas(),
            equivalence_atlas(),
            henson_atlas(3),
            henson_atlas(4),
            random_graph_atlas(),
            random_graph_fourary_atlas(),
            partition_atlas(&[BlockKind::Infinite, BlockKind::Infinite]),
            partition_atlas(&[BlockKind::Singleton, BlockKind::Infinite]),
        ] {
            let report = atlas.validate();
            assert!(report.is_valid(), "{}: {:?}", atlas.name(), report.errors);
        }
    }

    #[test]
    fn equality_transitivity_is_forbidden() {
        let atlas = equality_atlas();
        let bad = Pattern::from_labels(3, vec![vec![0, 0, 0], vec![0, 0, 1]]).unwrap();
        atlas.check_pattern(&bad).unwrap();
        assert!(!atlas.realizable(&bad));
        let fine = Pattern::from_labels(3, vec![vec![0, 0, 0], vec![0, 0, 0]]).unwrap();
        assert!(atlas.realizable(&fine));
    }

    #[test]
    fn henson_forbids_its_clique() {
        let atlas = henson_atlas(3);
        let tri = Pattern::from_labels(3, vec![vec![0, 0, 0], vec![1, 1, 1]]).unwrap();
        assert!(!atlas.realizable(&tri));
        // one non-edge makes it fine
        let ok = Pattern::from_labels(3, vec![vec![0, 0, 0], vec![1, 1, 2]]).unwrap();
        assert!(atlas.realizable(&ok));
    }

    #[test]
    fn random_graph_admits_all_injective_typings() {
        let atlas = random_graph_atlas();
        for a in [1u16, 2] {
            for b in [1u16, 2] {
                for c in [1u16, 2] {
                    let p =
                        Pattern::from_labels(3, vec![vec![0, 0, 0], vec![a, b, c]]).unwrap();
                    assert!(atlas.realizable(&p));
                }
            }
        }
    }

    #[test]
    fn partition_labels_match_the_contract() {
        let atlas = partition_atlas(&[BlockKind::Infinite, BlockKind::Infinite]);
        assert_eq!(atlas.label_names(1), &["V1", "V2"]);
        assert_eq!(
            atlas.label_names(2),
            &["eq1", "eq2", "n11", "n12", "n21", "n22"]
        );
        let single = partition_atlas(&[BlockKind::Singleton, BlockKind::Infinite]);
        // two distinct points in the singleton block are ruled out
        let bad = Pattern::from_labels(2, vec![vec![0, 0], vec![2]]).unwrap();
        assert!(!single.realizable(&bad));
        assert!(partition_atlas(&[BlockKind::Infinite, BlockKind::Infinite])
            .validate()
            .is_valid());
    }

    #[test]
    fn fourary_relations_split_by_pair_agreement() {
        let atlas = random_graph_fourary_atlas();
        let req = atlas.relation("Req").unwrap();
        let rneq = atlas.relation("Rneq").unwrap();
        assert!(!req.allowed.is_empty());
        assert!(!rneq.allowed.is_empty());
        for p in &req.allowed {
            assert_eq!(p.pair(0, 1), p.pair(2, 3));
        }
        for p in &rneq.allowed {
            assert_ne!(p.pair(0, 1), p.pair(2, 3));
            assert!(p.pair(0, 1) != 0 && p.pair(2, 3) != 0);
        }
        // no pattern satisfies both relations
        for p in &req.allowed {
            assert!(rneq.allowed.binary_search(p).is_err());
        }
    }

    #[test]
    fn by_name_roundtrip() {
        assert_eq!(by_name("equality").unwrap().name(), "equality");
        assert_eq!(by_name("henson3").unwrap().name(), "henson3");
        assert!(by_name("henson2").is_err());
        assert!(by_name("partition:1,inf").is_ok());
        assert!(by_name("nope").is_err());
    }
}
