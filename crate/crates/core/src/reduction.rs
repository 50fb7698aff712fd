//! The finite orbit instance, minimality transfer, constructive lifting, and
//! the end-to-end solve pipeline.
//!
//! A minimized pattern instance reduces to a finite CSP whose variables are
//! the `k`-subsets of the source variables and whose values are the arity-`k`
//! orbit labels. Solutions of the finite instance lift back constructively:
//! the lift quotients variables along diagonal pair labels, reads a witness
//! pattern off the solution, and verifies realizability and constraint
//! satisfaction step by step. Every verification failure names the step, as
//! a lift failure on a minimized instance signals an engine or atlas bug.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{
    self, AlgebraError, FiniteRelation, FiniteStructure, WidthCertificate,
};
use crate::atlas::{io as atlas_io, AtlasError, Family, Pattern, PatternAtlas, SlotMap};
use crate::combi::{pair_rank, subsets};
use crate::engine::{
    self, expand_pattern, EngineError, FiniteConstraint, FiniteInstance, Instance,
    MinimalityVerdict,
};

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Atlas(#[from] AtlasError),
    #[error("source instance is trivial; the orbit instance is undefined only up to it")]
    TrivialSource,
    #[error("orbit level {0} must be between 1 and the atlas homogeneity arity {1}")]
    BadOrbitLevel(usize, usize),
    #[error("instance lacks a minimality stamp of at least ({0}, {1})")]
    MissingStamp(usize, usize),
    #[error("lift failed at step `{step}`: {detail}")]
    Lift { step: &'static str, detail: String },
    #[error("finite search exhausted on a certified template: {0}")]
    CertificateContradiction(String),
    #[error("no concrete materialization for this template family: {0}")]
    UnsupportedFamily(String),
    #[error("witness file error: {0}")]
    Format(String),
}

/// Maps allowed patterns to their per-subset orbit label rows.
type OrbitTuples<'a> = &'a dyn Fn(&[Pattern], usize) -> Vec<Vec<u8>>;

fn lift_err(step: &'static str, detail: String) -> ReductionError {
    ReductionError::Lift { step, detail }
}

/// The finite orbit instance of a pattern instance, with back references.
#[derive(Clone, Debug)]
pub struct OrbitInstance {
    pub finite: FiniteInstance,
    /// Orbit level: variables are the `k`-subsets of the source variables.
    pub k: usize,
    /// Finite variable index to source variable subset.
    pub var_subsets: Vec<Vec<usize>>,
    /// Finite constraint index to source constraint index.
    pub constraint_source: Vec<usize>,
}

/// Builds the orbit instance at level `k`: one finite variable per `k`-subset
/// of source variables, one finite constraint per source constraint of scope
/// at least `k`, whose tuples are the per-subset restriction labels of the
/// allowed patterns.
pub fn build_orbit_instance(
    instance: &Instance,
    k: usize,
) -> Result<OrbitInstance, ReductionError> {
    let atlas = instance.atlas();
    if k == 0 || k > atlas.k() {
        return Err(ReductionError::BadOrbitLevel(k, atlas.k()));
    }
    if instance.is_trivial() {
        return Err(ReductionError::TrivialSource);
    }
    let n = instance.variables().len();
    let var_subsets = subsets(n, k);
    let var_names: Vec<String> = var_subsets
        .iter()
        .map(|s| {
            s.iter()
                .map(|&v| instance.variables()[v].clone())
                .collect::<Vec<_>>()
                .join("+")
        })
        .collect();
    let alphabet: Vec<String> = atlas.label_names(k).to_vec();

    let mut constraints = Vec::new();
    let mut constraint_source = Vec::new();
    for (ci, c) in instance.constraints().iter().enumerate() {
        if c.scope.len() < k {
            continue;
        }
        let local_subsets = subsets(c.scope.len(), k);
        let scope: Vec<usize> = local_subsets
            .iter()
            .map(|s| {
                let global: Vec<usize> = s.iter().map(|&i| c.scope[i]).collect();
                crate::combi::subset_rank(&global, n)
            })
            .collect();
        // scope is sorted: global subsets of a sorted scope enumerate in
        // lexicographic order compatible with subset ranks
        debug_assert!(scope.windows(2).all(|w| w[0] < w[1]));
        let mut tuples: Vec<Vec<u16>> = c
            .allowed
            .iter()
            .map(|p| local_subsets.iter().map(|s| p.subset_label(s)).collect())
            .collect();
        tuples.sort();
        tuples.dedup();
        constraints.push(FiniteConstraint { scope, tuples });
        constraint_source.push(ci);
    }

    let orbit = OrbitInstance {
        finite: FiniteInstance {
            var_names,
            alphabet,
            constraints,
        },
        k,
        var_subsets,
        constraint_source,
    };
    // a non-trivial source yields a non-trivial orbit instance
    if orbit.finite.is_trivial() {
        return Err(ReductionError::Lift {
            step: "orbit construction",
            detail: "non-trivial source produced an empty finite constraint".into(),
        });
    }
    Ok(orbit)
}

/// Checks minimality transfer: a `(a*k, b*k)`-minimal instance must reduce to
/// an `(a, b)`-minimal orbit instance. Requires the stamp.
pub fn check_minimality_transfer(
    instance: &Instance,
    a: usize,
    b: usize,
    k: usize,
) -> Result<MinimalityVerdict, ReductionError> {
    match instance.minimality_level() {
        Some((sk, sl)) if sk >= a * k && sl >= b * k => {}
        _ => return Err(ReductionError::MissingStamp(a * k, b * k)),
    }
    let orbit = build_orbit_instance(instance, k)?;
    Ok(engine::finite_is_minimal(&orbit.finite, a, b))
}

/// A lifted solution: the quotient map, the witness pattern on the classes,
/// and an optional concrete materialization.
#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub class_of: Vec<usize>,
    pub classes: usize,
    pub pattern: Pattern,
    pub materialization: Option<Materialization>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Materialization {
    /// One integer per class; distinct classes get distinct values.
    Integers { values: Vec<u64> },
    /// Block plus member index per class.
    BlockedIntegers { block: Vec<usize>, member: Vec<u64> },
    /// A concrete finite graph on the classes.
    Graph {
        vertices: usize,
        edges: Vec<(usize, usize)>,
    },
    /// One color name per class.
    Coloring { colors: Vec<String> },
}

/// Lifts a solution of the orbit instance to a witness for the source.
///
/// Requires the source stamped at least `(k, max(k+1, ell))`-minimal. Levels
/// below the atlas homogeneity arity are not lifted here; color alphabets at
/// level one go through the forbidden-pattern solver's coloring route.
pub fn lift_solution(
    instance: &Instance,
    orbit: &OrbitInstance,
    h: &[u16],
) -> Result<Witness, ReductionError> {
    let atlas = instance.atlas();
    let k = orbit.k;
    if k != atlas.k() || k < 2 {
        if k == 1 {
            return Err(lift_err(
                "level check",
                "level-one orbit solutions lift through the coloring route".into(),
            ));
        }
        return Err(ReductionError::BadOrbitLevel(k, atlas.k()));
    }
    let need = (k, (k + 1).max(atlas.ell()));
    match instance.minimality_level() {
        Some((sk, sl)) if sk >= need.0 && sl >= need.1 => {}
        _ => return Err(ReductionError::MissingStamp(need.0, need.1)),
    }
    let n = instance.variables().len();
    if h.len() != orbit.finite.var_names.len() {
        return Err(lift_err(
            "solution shape",
            format!(
                "assignment has {} entries, expected {}",
                h.len(),
                orbit.finite.var_names.len()
            ),
        ));
    }

    // the assignment must solve the finite instance
    for (fi, c) in orbit.finite.constraints.iter().enumerate() {
        let projected: Vec<u16> = c.scope.iter().map(|&v| h[v]).collect();
        if c.tuples.binary_search(&projected).is_err() {
            return Err(lift_err(
                "solution check",
                format!("finite constraint {fi} rejects the assignment"),
            ));
        }
    }

    if n == 1 {
        return single_point_witness(instance);
    }

    // pair label of two source variables under h, consistent over every
    // containing subset
    let pair_label = |x: usize, y: usize| -> Result<u16, ReductionError> {
        debug_assert!(x < y);
        let mut value: Option<u16> = None;
        for (vi, subset) in orbit.var_subsets.iter().enumerate() {
            let (Ok(px) | Err(px)) = subset.binary_search(&x);
            if subset.get(px) != Some(&x) {
                continue;
            }
            let (Ok(py) | Err(py)) = subset.binary_search(&y);
            if subset.get(py) != Some(&y) {
                continue;
            }
            let map = SlotMap::new(k, vec![px as u8, py as u8]);
            let derived = atlas.apply_map(&map, h[vi]);
            match value {
                None => value = Some(derived),
                Some(prev) if prev != derived => {
                    return Err(lift_err(
                        "pair restriction",
                        format!("subsets containing ({x}, {y}) disagree on the pair label"),
                    ))
                }
                _ => {}
            }
        }
        value.ok_or_else(|| {
            lift_err(
                "pair restriction",
                format!("no orbit variable contains the pair ({x}, {y})"),
            )
        })
    };

    // the identification relation: pairs on diagonal labels
    let mut same = vec![false; n * n];
    for x in 0..n {
        for y in x + 1..n {
            if atlas.is_diagonal(pair_label(x, y)?) {
                same[x * n + y] = true;
                same[y * n + x] = true;
            }
        }
    }
    // equivalence check: transitivity is a consequence of minimality, so a
    // failure here is a bug upstream
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                if x != y && y != z && x != z && same[x * n + y] && same[y * n + z]
                    && !same[x * n + z] {
                        return Err(lift_err(
                            "equivalence check",
                            format!(
                                "{} ~ {} and {} ~ {} but the outer pair is not identified",
                                instance.variables()[x],
                                instance.variables()[y],
                                instance.variables()[y],
                                instance.variables()[z]
                            ),
                        ));
                    }
            }
        }
    }
    // classes numbered by least member
    let mut class_of = vec![usize::MAX; n];
    let mut classes = 0usize;
    for x in 0..n {
        if class_of[x] == usize::MAX {
            class_of[x] = classes;
            for y in x + 1..n {
                if same[x * n + y] {
                    class_of[y] = classes;
                }
            }
            classes += 1;
        }
    }
    let reps: Vec<usize> = (0..classes)
        .map(|c| class_of.iter().position(|&cc| cc == c).unwrap())
        .collect();

    // the assignment descends to class subsets: representatives choice must
    // not matter
    for x in 0..n {
        for y in x + 1..n {
            if class_of[x] == class_of[y] {
                continue;
            }
            let (ca, cb) = (class_of[x].min(class_of[y]), class_of[x].max(class_of[y]));
            let (rx, ry) = (reps[ca], reps[cb]);
            let via_members = pair_label(x.min(y), x.max(y))?;
            let via_reps = pair_label(rx, ry)?;
            let aligned = if (x < y) == (class_of[x] < class_of[y]) {
                via_members
            } else {
                atlas.swap_pair(via_members)
            };
            if aligned != via_reps {
                return Err(lift_err(
                    "descent check",
                    format!(
                        "pairs ({}, {}) and ({}, {}) represent the same class pair but differ",
                        instance.variables()[x],
                        instance.variables()[y],
                        instance.variables()[rx],
                        instance.variables()[ry]
                    ),
                ));
            }
        }
    }

    // witness pattern on the classes
    let mut pairs = Vec::new();
    for ci in 0..classes {
        for cj in ci + 1..classes {
            pairs.push(pair_label(reps[ci], reps[cj])?);
        }
    }
    let mut unary = Vec::with_capacity(classes);
    for ci in 0..classes {
        let label = if classes >= 2 {
            let cj = if ci == 0 { 1 } else { 0 };
            let (lo, hi) = (ci.min(cj), ci.max(cj));
            let l = pairs[pair_rank(lo, hi, classes)];
            atlas.pair_coord(l, if ci < cj { 0 } else { 1 })
        } else {
            // a single class with several members carries a diagonal pair
            let x = reps[0];
            let y = (0..n).find(|&y| y != x).expect("n >= 2");
            atlas.pair_coord(pair_label(x.min(y), x.max(y))?, 0)
        };
        unary.push(label);
    }
    let rows = if classes >= 2 {
        vec![unary, pairs]
    } else {
        vec![unary]
    };
    let witness =
        Pattern::from_labels(classes, rows).map_err(|e| lift_err("witness assembly", e))?;
    atlas
        .check_pattern(&witness)
        .map_err(|e| lift_err("witness assembly", e.to_string()))?;

    // every restriction of bounded size must be realizable
    for m in 1..=atlas.ell().min(classes) {
        for s in subsets(classes, m) {
            if !atlas.realizable(&witness.restrict(&s)) {
                return Err(lift_err(
                    "witness realizability",
                    format!("class subset {s:?} restricts to an unrealizable pattern"),
                ));
            }
        }
    }
    if !atlas.realizable(&witness) {
        return Err(lift_err(
            "witness realizability",
            "witness pattern embeds a forbidden pattern".into(),
        ));
    }

    // composing the quotient with the witness satisfies every constraint
    for (ci, c) in instance.constraints().iter().enumerate() {
        let class_tuple: Vec<usize> = c.scope.iter().map(|&v| class_of[v]).collect();
        let induced = expand_pattern(atlas, &witness, &class_tuple);
        if c.allowed.binary_search(&induced).is_err() {
            return Err(lift_err(
                "constraint satisfaction",
                format!("source constraint {ci} rejects the composed assignment"),
            ));
        }
    }

    // the labels the witness induces on the variable subsets solve the orbit
    // instance in turn
    for (vi, subset) in orbit.var_subsets.iter().enumerate() {
        let class_tuple: Vec<usize> = subset.iter().map(|&v| class_of[v]).collect();
        let induced = atlas.derived_label(&witness, &class_tuple);
        if induced != h[vi] {
            return Err(lift_err(
                "orbit projection",
                format!(
                    "witness induces a different label on {}",
                    orbit.finite.var_names[vi]
                ),
            ));
        }
    }

    let mut out = Witness {
        class_of,
        classes,
        pattern: witness,
        materialization: None,
    };
    out.materialization = materialize_witness(atlas, &out).ok();
    Ok(out)
}

fn single_point_witness(instance: &Instance) -> Result<Witness, ReductionError> {
    let atlas = instance.atlas();
    let label = instance
        .constraints()
        .iter()
        .filter(|c| c.scope.len() == 1)
        .flat_map(|c| c.allowed.first())
        .map(|p| p.unary(0))
        .min()
        .ok_or_else(|| {
            lift_err(
                "single point",
                "no unary constraint to read a label from".into(),
            )
        })?;
    let mut w = Witness {
        class_of: vec![0],
        classes: 1,
        pattern: Pattern::point(label),
        materialization: None,
    };
    w.materialization = materialize_witness(atlas, &w).ok();
    Ok(w)
}

/// Concrete materialization per builtin family.
pub fn materialize_witness(
    atlas: &PatternAtlas,
    witness: &Witness,
) -> Result<Materialization, ReductionError> {
    let c = witness.classes;
    let p = &witness.pattern;
    match atlas.family() {
        Family::Equality => Ok(Materialization::Integers {
            values: (0..c as u64).collect(),
        }),
        Family::Equivalence => {
            // pair label 1 groups classes into blocks
            let mut block_of = vec![usize::MAX; c];
            let mut blocks = 0;
            #[allow(clippy::needless_range_loop)]
            for i in 0..c {
                if block_of[i] == usize::MAX {
                    block_of[i] = blocks;
                    for j in i + 1..c {
                        if p.pair(i, j) == 1 {
                            block_of[j] = blocks;
                        }
                    }
                    blocks += 1;
                }
            }
            let mut counter = vec![0u64; blocks];
            let mut member = Vec::with_capacity(c);
            for &b in &block_of {
                member.push(counter[b]);
                counter[b] += 1;
            }
            Ok(Materialization::BlockedIntegers {
                block: block_of,
                member,
            })
        }
        Family::Henson(bound) => {
            let edges = graph_edges(p);
            // the witness graph must avoid the defining clique
            for s in subsets(c, (*bound).min(c)) {
                if s.len() == *bound
                    && s.iter().enumerate().all(|(a, &u)| {
                        s[a + 1..].iter().all(|&v| edges.contains(&(u, v)))
                    })
                {
                    return Err(lift_err(
                        "materialization",
                        "witness graph contains the forbidden clique".into(),
                    ));
                }
            }
            Ok(Materialization::Graph { vertices: c, edges })
        }
        Family::RandomGraph | Family::RandomGraphFourary => Ok(Materialization::Graph {
            vertices: c,
            edges: graph_edges(p),
        }),
        Family::Partition(blocks) => {
            let mut counter = vec![0u64; blocks.len()];
            let mut block = Vec::with_capacity(c);
            let mut member = Vec::with_capacity(c);
            for i in 0..c {
                let b = p.unary(i) as usize;
                if blocks[b] == crate::atlas::BlockKind::Singleton && counter[b] > 0 {
                    return Err(lift_err(
                        "materialization",
                        "two classes in a singleton block".into(),
                    ));
                }
                block.push(b);
                member.push(counter[b]);
                counter[b] += 1;
            }
            Ok(Materialization::BlockedIntegers { block, member })
        }
        Family::Mmsnp { colors } => Ok(Materialization::Coloring {
            colors: (0..c)
                .map(|i| colors[p.unary(i) as usize].clone())
                .collect(),
        }),
        Family::Custom => Err(ReductionError::UnsupportedFamily(
            atlas.name().to_string(),
        )),
    }
}

fn graph_edges(p: &Pattern) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            if p.pair(i, j) == 1 {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Independent witness verification, the checker behind `verify-witness`.
pub fn verify_witness(instance: &Instance, witness: &Witness) -> Result<(), ReductionError> {
    let atlas = instance.atlas();
    let n = instance.variables().len();
    if witness.class_of.len() != n {
        return Err(ReductionError::Format(
            "quotient map length does not match the variables".into(),
        ));
    }
    if witness.pattern.len() != witness.classes {
        return Err(ReductionError::Format(
            "witness pattern size does not match the class count".into(),
        ));
    }
    let mut seen = vec![false; witness.classes];
    for &c in &witness.class_of {
        if c >= witness.classes {
            return Err(ReductionError::Format("class index out of range".into()));
        }
        seen[c] = true;
    }
    if !seen.iter().all(|&s| s) {
        return Err(ReductionError::Format("unused witness class".into()));
    }
    atlas
        .check_pattern(&witness.pattern)
        .map_err(|e| lift_err("witness coherence", e.to_string()))?;
    if witness.classes >= 2 {
        for i in 0..witness.classes {
            for j in i + 1..witness.classes {
                if atlas.is_diagonal(witness.pattern.pair(i, j)) {
                    return Err(lift_err(
                        "witness injectivity",
                        format!("classes {i} and {j} carry a diagonal label"),
                    ));
                }
            }
        }
    }
    if !atlas.realizable(&witness.pattern) {
        return Err(lift_err(
            "witness realizability",
            "witness pattern embeds a forbidden pattern".into(),
        ));
    }
    for (ci, c) in instance.constraints().iter().enumerate() {
        let class_tuple: Vec<usize> = c.scope.iter().map(|&v| witness.class_of[v]).collect();
        let induced = expand_pattern(atlas, &witness.pattern, &class_tuple);
        if c.allowed.binary_search(&induced).is_err() {
            return Err(lift_err(
                "constraint satisfaction",
                format!("source constraint {ci} rejects the witness"),
            ));
        }
    }
    if let Some(m) = &witness.materialization {
        verify_materialization(atlas, witness, m)?;
    }
    Ok(())
}

fn verify_materialization(
    atlas: &PatternAtlas,
    witness: &Witness,
    m: &Materialization,
) -> Result<(), ReductionError> {
    let bad = |msg: &str| Err(lift_err("materialization", msg.to_string()));
    match (atlas.family(), m) {
        (Family::Equality, Materialization::Integers { values }) => {
            let mut sorted = values.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != values.len() {
                return bad("equality classes must get distinct integers");
            }
            Ok(())
        }
        (Family::Equivalence, Materialization::BlockedIntegers { block, member }) => {
            for i in 0..witness.classes {
                for j in i + 1..witness.classes {
                    let same_block = block[i] == block[j];
                    let label = witness.pattern.pair(i, j);
                    if same_block != (label == 1) {
                        return bad("block structure disagrees with the pair labels");
                    }
                    if same_block && member[i] == member[j] {
                        return bad("two classes share a block member");
                    }
                }
            }
            Ok(())
        }
        (Family::Partition(kinds), Materialization::BlockedIntegers { block, member }) => {
            for i in 0..witness.classes {
                if block[i] != witness.pattern.unary(i) as usize {
                    return bad("block assignment disagrees with the unary labels");
                }
                if kinds[block[i]] == crate::atlas::BlockKind::Singleton && member[i] != 0 {
                    return bad("singleton block member out of range");
                }
            }
            Ok(())
        }
        (
            Family::Henson(_) | Family::RandomGraph | Family::RandomGraphFourary,
            Materialization::Graph { vertices, edges },
        ) => {
            if *vertices != witness.classes {
                return bad("graph vertex count mismatch");
            }
            let expect = graph_edges(&witness.pattern);
            if *edges != expect {
                return bad("edge list disagrees with the pair labels");
            }
            Ok(())
        }
        (Family::Mmsnp { colors }, Materialization::Coloring { colors: got }) => {
            for i in 0..witness.classes {
                if got[i] != colors[witness.pattern.unary(i) as usize] {
                    return bad("coloring disagrees with the unary labels");
                }
            }
            Ok(())
        }
        _ => bad("materialization kind does not fit the template family"),
    }
}

// ---------------------------------------------------------------------------
// solving

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMode {
    /// Levels `(2k, max(3k, ell))`, backed by linked weak near-unanimity
    /// certificates.
    Wnu,
    /// Levels `(k, max(k+1, ell))`, backed by totally symmetric certificates.
    Ts,
}

impl SolveMode {
    pub fn levels(&self, atlas: &PatternAtlas) -> (usize, usize) {
        let k = atlas.k();
        match self {
            SolveMode::Wnu => (2 * k, (3 * k).max(atlas.ell())),
            SolveMode::Ts => (k, (k + 1).max(atlas.ell())),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Verdict {
    Sat(Witness),
    Unsat,
    Unknown(String),
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Sat(_) => "SAT",
            Verdict::Unsat => "UNSAT",
            Verdict::Unknown(_) => "UNKNOWN",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Solved {
    pub verdict: Verdict,
    pub minimized: Instance,
}

/// Minimize, reduce, search, lift.
///
/// A trivial minimized instance is unsatisfiable unconditionally. On an
/// exhausted finite search the outcome depends on the certificate: certified
/// templates make an exhausted search an internal contradiction, everything
/// else reports unknown.
pub fn solve(
    instance: &Instance,
    mode: SolveMode,
    certificate: Option<&WidthCertificate>,
) -> Result<Solved, ReductionError> {
    let atlas = instance.atlas();
    let (mk, ml) = mode.levels(atlas);
    let minimized = engine::establish_minimality(instance, mk, ml)?;
    if minimized.is_trivial() {
        return Ok(Solved {
            verdict: Verdict::Unsat,
            minimized,
        });
    }
    if instance.variables().len() < atlas.k() {
        let witness = single_point_witness(&minimized)?;
        return Ok(Solved {
            verdict: Verdict::Sat(witness),
            minimized,
        });
    }
    let orbit = build_orbit_instance(&minimized, atlas.k())?;
    match engine::search_solution(&orbit.finite) {
        Some(h) => {
            let witness = lift_solution(&minimized, &orbit, &h)?;
            Ok(Solved {
                verdict: Verdict::Sat(witness),
                minimized,
            })
        }
        None => {
            if certificate.is_some() {
                Err(ReductionError::CertificateContradiction(format!(
                    "non-trivial ({mk}, {ml})-minimal instance with no finite solution"
                )))
            } else {
                Ok(Solved {
                    verdict: Verdict::Unknown(
                        "finite search exhausted; template carries no certificate".into(),
                    ),
                    minimized,
                })
            }
        }
    }
}

// ---------------------------------------------------------------------------
// the finite structure of a template and its certificate

/// The finite structure on the arity-`k` orbit labels: top relations for the
/// small scope sizes and the orbit image of every declared relation.
///
/// Top relations are included for scopes up to `min(ell, 4)`; for the shipped
/// families realizability is decided by subsets of that size, so everything
/// the minimality engine derives is positively combined from these relations.
///
/// Wide orbit images blow up the polymorphism searches, so a relation is
/// replaced by its coordinate projections whenever the projections, the top
/// of its scope, and local consistency provably cut out exactly the original
/// tuple set. Preservation of the emitted structure then implies preservation
/// of the original relation, and conversely the projections are preserved by
/// anything preserving it.
pub fn orbit_structure(atlas: &PatternAtlas) -> Result<FiniteStructure, ReductionError> {
    let k = atlas.k();
    let domain: Vec<String> = atlas.label_names(k).to_vec();
    let n_labels = domain.len();
    let orbit_tuples = |patterns: &[Pattern], classes: usize| -> Vec<Vec<u8>> {
        let local = subsets(classes, k);
        let mut tuples: Vec<Vec<u8>> = patterns
            .iter()
            .map(|p| {
                local
                    .iter()
                    .map(|s| {
                        let l = p.subset_label(s);
                        debug_assert!(l < 256);
                        l as u8
                    })
                    .collect()
            })
            .collect();
        tuples.sort();
        tuples.dedup();
        tuples
    };

    let mut relations: Vec<FiniteRelation> = Vec::new();
    let top_max = atlas.ell().clamp(k + 1, 4.max(k + 1));
    for m in (k + 1)..=top_max {
        relations.push(FiniteRelation {
            name: format!("top{m}"),
            arity: subsets(m, k).len(),
            tuples: orbit_tuples(&atlas.enumerate(m)?, m),
        });
    }

    for rel in atlas.relations() {
        let classes = rel.classes();
        if classes < k {
            continue;
        }
        let full = FiniteRelation {
            name: format!("rel_{}", rel.name),
            arity: subsets(classes, k).len(),
            tuples: orbit_tuples(&rel.allowed, classes),
        };
        if classes <= k + 1 || full.tuples.len() <= 16 {
            relations.push(full);
            continue;
        }
        match decompose_orbit_relation(atlas, rel, &full, n_labels, &orbit_tuples)? {
            Some(mut parts) => relations.append(&mut parts),
            None => relations.push(full),
        }
    }
    Ok(FiniteStructure { domain, relations })
}

/// Tries to replace a wide orbit relation by its unary and binary coordinate
/// projections. Succeeds only when two facts are verified on the spot: the
/// scope's top equals its local-consistency closure, and the projections cut
/// the top down to exactly the original tuples.
fn decompose_orbit_relation(
    atlas: &PatternAtlas,
    rel: &crate::atlas::RelationDef,
    full: &FiniteRelation,
    n_labels: usize,
    orbit_tuples: OrbitTuples,
) -> Result<Option<Vec<FiniteRelation>>, ReductionError> {
    let k = atlas.k();
    let classes = rel.classes();
    let arity = full.arity;
    if n_labels.pow(arity as u32) > 2_000_000 || classes > k + 2 {
        return Ok(None);
    }
    let top_full = orbit_tuples(&atlas.enumerate(classes)?, classes);
    let top_small = orbit_tuples(&atlas.enumerate(k + 1)?, k + 1);
    // coordinates of each (k+1)-class-subset within the full coordinate list
    let coords = subsets(classes, k);
    let coord_index = |s: &[usize]| coords.iter().position(|c| c == s).unwrap();
    let windows: Vec<Vec<usize>> = subsets(classes, k + 1)
        .iter()
        .map(|w| {
            subsets(k + 1, k)
                .iter()
                .map(|s| {
                    let global: Vec<usize> = s.iter().map(|&i| w[i]).collect();
                    coord_index(&global)
                })
                .collect()
        })
        .collect();
    // the top must be exactly its local closure
    let mut closure: Vec<Vec<u8>> = Vec::new();
    let mut candidate = vec![0u8; arity];
    crate::combi::for_each_tuple(n_labels, arity, |t| {
        for (i, &v) in t.iter().enumerate() {
            candidate[i] = v as u8;
        }
        let locally_fine = windows.iter().all(|w| {
            let proj: Vec<u8> = w.iter().map(|&c| candidate[c]).collect();
            top_small.binary_search(&proj).is_ok()
        });
        if locally_fine {
            closure.push(candidate.clone());
        }
        true
    });
    if closure != top_full {
        return Ok(None);
    }

    // unary and binary projections of the original tuples
    let single = |c: usize| -> Vec<Vec<u8>> {
        let mut t: Vec<Vec<u8>> = full.tuples.iter().map(|t| vec![t[c]]).collect();
        t.sort();
        t.dedup();
        t
    };
    let pair = |a: usize, b: usize| -> Vec<Vec<u8>> {
        let mut t: Vec<Vec<u8>> = full.tuples.iter().map(|t| vec![t[a], t[b]]).collect();
        t.sort();
        t.dedup();
        t
    };
    let mut parts: Vec<(Vec<usize>, Vec<Vec<u8>>)> = Vec::new();
    for c in 0..arity {
        let s = single(c);
        if s.len() < n_labels {
            parts.push((vec![c], s));
        }
    }
    for a in 0..arity {
        for b in a + 1..arity {
            let p = pair(a, b);
            let (sa, sb) = (single(a), single(b));
            if p.len() < sa.len() * sb.len() {
                parts.push((vec![a, b], p));
            }
        }
    }
    // the projections together with the top must reproduce the relation
    let cut: Vec<Vec<u8>> = top_full
        .iter()
        .filter(|t| {
            parts.iter().all(|(cs, tuples)| {
                let proj: Vec<u8> = cs.iter().map(|&c| t[c]).collect();
                tuples.binary_search(&proj).is_ok()
            })
        })
        .cloned()
        .collect();
    if cut != full.tuples {
        return Ok(None);
    }
    Ok(Some(
        parts
            .into_iter()
            .map(|(cs, tuples)| FiniteRelation {
                name: format!(
                    "{}_proj{}",
                    full.name,
                    cs.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("_")
                ),
                arity: cs.len(),
                tuples,
            })
            .collect(),
    ))
}

/// Searches a bounded-width certificate for the template's orbit structure:
/// core, singleton expansion, then the mode-appropriate search. Certificate
/// operations are composed with the retraction back to the full label domain
/// and re-verified against the orbit structure.
pub fn template_certificate(
    atlas: &PatternAtlas,
    mode: SolveMode,
) -> Result<Option<WidthCertificate>, ReductionError> {
    let structure = orbit_structure(atlas)?;
    let (core, retraction) = algebra::core_of(&structure)?;
    let image: Vec<u8> = {
        let mut img = retraction.clone();
        img.sort_unstable();
        img.dedup();
        img
    };
    let lift_table = |t: &algebra::OperationTable| -> algebra::OperationTable {
        // compose with the retraction on the way in and the image embedding
        // on the way out
        let d = structure.domain.len();
        let arity = t.arity;
        let mut values = Vec::with_capacity(d.pow(arity as u32));
        crate::combi::for_each_tuple(d, arity, |args| {
            let core_args: Vec<u8> = args
                .iter()
                .map(|&a| {
                    let r = retraction[a];
                    image.binary_search(&r).unwrap() as u8
                })
                .collect();
            values.push(image[t.eval(&core_args) as usize]);
            true
        });
        algebra::OperationTable::dense(arity, d, values)
    };
    let cert = match mode {
        SolveMode::Wnu => algebra::find_linked_wnu_pair(&core)?.map(|(w3, w4)| {
            WidthCertificate::WnuPair {
                w3: lift_table(&w3),
                w4: lift_table(&w4),
            }
        }),
        SolveMode::Ts => {
            algebra::has_ts_all_arities(&core)?.map(|set_fn| {
                let w3 = lift_table(&set_fn.at_arity(3));
                let w4 = lift_table(&set_fn.at_arity(4));
                // on a rigid core the set function itself is the certificate;
                // otherwise ship the composed pair
                if core.size() == structure.domain.len() {
                    WidthCertificate::TotallySymmetric { set_fn }
                } else {
                    WidthCertificate::WnuPair { w3, w4 }
                }
            })
        }
    };
    if let Some(cert) = &cert {
        for op in cert.operations() {
            for rel in &structure.relations {
                if !op.preserves(rel) {
                    return Err(ReductionError::Algebra(AlgebraError::Internal(format!(
                        "certificate operation fails to preserve `{}`",
                        rel.name
                    ))));
                }
            }
        }
    }
    Ok(cert)
}

// ---------------------------------------------------------------------------
// witness files

pub const WITNESS_FORMAT: &str = "relwidth.witness/v1";

#[derive(Serialize, Deserialize)]
pub struct WitnessDoc {
    pub format: String,
    pub atlas: String,
    pub variables: Vec<String>,
    pub class_of: Vec<usize>,
    pub classes: usize,
    pub pattern: atlas_io::PatternDoc,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub materialization: Option<Materialization>,
}

pub fn witness_to_json(instance: &Instance, witness: &Witness) -> String {
    let doc = WitnessDoc {
        format: WITNESS_FORMAT.to_string(),
        atlas: instance.atlas().name().to_string(),
        variables: instance.variables().to_vec(),
        class_of: witness.class_of.clone(),
        classes: witness.classes,
        pattern: atlas_io::pattern_to_doc(instance.atlas(), &witness.pattern),
        materialization: witness.materialization.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("witness serialization")
}

pub fn witness_from_json(
    atlas: &Arc<PatternAtlas>,
    text: &str,
) -> Result<(Witness, Vec<String>), ReductionError> {
    let doc: WitnessDoc =
        serde_json::from_str(text).map_err(|e| ReductionError::Format(e.to_string()))?;
    if doc.format != WITNESS_FORMAT {
        return Err(ReductionError::Format(format!(
            "unsupported witness format `{}`, expected `{WITNESS_FORMAT}`",
            doc.format
        )));
    }
    let pattern = atlas_io::pattern_from_doc(atlas, &doc.pattern)?;
    Ok((
        Witness {
            class_of: doc.class_of,
            classes: doc.classes,
            pattern,
            materialization: doc.materialization,
        },
        doc.variables,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::builtin::*;
    use crate::engine::{
        establish_minimality, gen_random_instance, normalize, RawConstraint, RawInstance,
    };

    fn arc(atlas: PatternAtlas) -> Arc<PatternAtlas> {
        Arc::new(atlas)
    }

    fn apply(relation: &str, args: &[&str]) -> RawConstraint {
        RawConstraint::Apply {
            relation: relation.into(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn vars(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn orbit_instance_of_an_equality_chain() {
        let atlas = arc(equality_atlas());
        let raw = RawInstance {
            variables: vars(&["x", "y", "z"]),
            constraints: vec![apply("eq", &["x", "y"]), apply("eq", &["y", "z"])],
        };
        let (inst, _) = normalize(&atlas, &raw).unwrap();
        let min = establish_minimality(&inst, 2, 3).unwrap();
        let orbit = build_orbit_instance(&min, 2).unwrap();
        assert_eq!(orbit.finite.var_names.len(), 3);
        assert_eq!(orbit.finite.alphabet, vec!["eq", "neq"]);
        // the three-point scope forces eq on the third pair
        let triple = orbit
            .finite
            .constraints
            .iter()
            .find(|c| c.scope.len() == 3)
            .unwrap();
        assert_eq!(triple.tuples, vec![vec![0, 0, 0]]);
    }

    #[test]
    fn orbit_level_one_uses_unary_labels() {
        let atlas = arc(partition_atlas(&[
            crate::atlas::BlockKind::Infinite,
            crate::atlas::BlockKind::Infinite,
        ]));
        let raw = RawInstance {
            variables: vars(&["x", "y"]),
            constraints: vec![apply("block1", &["x"]), apply("neq", &["x", "y"])],
        };
        let (inst, _) = normalize(&atlas, &raw).unwrap();
        let orbit = build_orbit_instance(&inst, 1).unwrap();
        assert_eq!(orbit.finite.var_names.len(), 2);
        assert_eq!(orbit.finite.alphabet, vec!["V1", "V2"]);
        // the unary constraint keeps x in its block
        let unary = orbit
            .finite
            .constraints
            .iter()
            .find(|c| c.scope == vec![0])
            .unwrap();
        assert_eq!(unary.tuples, vec![vec![0]]);
    }

    #[test]
    fn trivial_sources_are_rejected() {
        let atlas = arc(equality_atlas());
        let raw = RawInstance {
            variables: vars(&["x", "y"]),
            constraints: vec![apply("eq", &["x", "y"]), apply("neq", &["x", "y"])],
        };
        let (inst, _) = normalize(&atlas, &raw).unwrap();
        let min = establish_minimality(&inst, 2, 2).unwrap();
        assert!(min.is_trivial());
        assert!(matches!(
            build_orbit_instance(&min, 2),
            Err(ReductionError::TrivialSource)
        ));
    }

    #[test]
    fn lift_splits_merged_and_separated_variables() {
        let atlas = arc(equality_atlas());
        let raw = RawInstance {
            variables: vars(&["x", "y", "z"]),
            constraints: vec![apply("eq", &["x", "y"]), apply("neq", &["y", "z"])],
        };
        let (inst, _) = normalize(&atlas, &raw).unwrap();
        let min = establish_minimality(&inst, 2, 3).unwrap();
        let orbit = build_orbit_instance(&min, 2).unwrap();
        let h = crate::engine::search_solution(&orbit.finite).expect("satisfiable");
        let w = lift_solution(&min, &orbit, &h).unwrap();
        assert_eq!(w.classes, 2);
        assert_eq!(w.class_of, vec![0, 0, 1]);
        match w.materialization.as_ref().unwrap() {
            Materialization::Integers { values } => assert_eq!(values, &vec![0, 1]),
            other => panic!("unexpected materialization {other:?}"),
        }
        verify_witness(&min, &w).unwrap();
    }

    #[test]
    fn lift_requires_the_stamp() {
        let atlas = arc(equality_atlas());
        let raw = RawInstance {
            variables: vars(&["x", "y"]),
            constraints: vec![apply("eq", &["x", "y"])],
        };
        let (inst, _) = normalize(&atlas, &raw).unwrap();
        let min = establish_minimality(&inst, 2, 3).unwrap();
        let orbit = build_orbit_instance(&min, 2).unwrap();
        let h = crate::engine::search_solution(&orbit.finite).unwrap();
        // an unstamped copy is rejected
        let (unstamped, _) = normalize(&atlas, &raw).unwrap();
        assert!(matches!(
            lift_solution(&unstamped, &orbit, &h),
            Err(ReductionError::MissingStamp(2, 3))
        ));
        assert!(lift_solution(&min, &orbit, &h).is_ok());
    }

    #[test]
    fn single_variable_instances_solve() {
        let atlas = arc(equality_atlas());
        let raw = RawInstance {
            variables: vars(&["x"]),
            constraints: vec![],
        };
        let (inst, _) = normalize(&atlas, &raw).unwrap();
        let solved = solve(&inst, SolveMode::Ts, None).unwrap();
        match solved.verdict {
            Verdict::Sat(w) => assert_eq!(w.classes, 1),
            v => panic!("expected SAT, got {}", v.name()),
        }
    }

    #[test]
    fn solve_modes_agree_on_equality() {
        let atlas = arc(equality_atlas());
        let raw = RawInstance {
            variables: vars(&["x", "y", "z"]),
            constraints: vec![apply("eq", &["x", "y"]), apply("eq", &["y", "z"])],
        };
        let (inst, _) = normalize(&atlas, &raw).unwrap();
        for mode in [SolveMode::Ts, SolveMode::Wnu] {
            let solved = solve(&inst, mode, None).unwrap();
            match solved.verdict {
                Verdict::Sat(w) => {
                    assert_eq!(w.classes, 1);
                    verify_witness(&solved.minimized, &w).unwrap();
                }
                v => panic!("expected SAT, got {}", v.name()),
            }
        }
    }

    #[test]
    fn henson_triangle_is_unsat_both_modes() {
        let atlas = arc(henson_atlas(3));
        let raw = RawInstance {
            variables: vars(&["a", "b", "c"]),
            constraints: vec![
                apply("E", &["a", "b"]),
                apply("E", &["b", "c"]),
                apply("E", &["a", "c"]),
            ],
        };
        let (inst, _) = normalize(&atlas, &raw).unwrap();
        for mode in [SolveMode::Ts, SolveMode::Wnu] {
            let solved = solve(&inst, mode, None).unwrap();
            assert!(matches!(solved.verdict, Verdict::Unsat));
        }
    }

    #[test]
    fn fourary_contradiction_is_unsat_in_wnu_mode() {
        let atlas = arc(random_graph_fourary_atlas());
        let raw = RawInstance {
            variables: vars(&["x1", "x2", "x3", "x4"]),
            constraints: vec![
                apply("Req", &["x1", "x2", "x3", "x4"]),
                apply("Rneq", &["x1", "x2", "x3", "x4"]),
            ],
        };
        let (inst, _) = normalize(&atlas, &raw).unwrap();
        let solved = solve(&inst, SolveMode::Wnu, None).unwrap();
        assert!(matches!(solved.verdict, Verdict::Unsat));
    }

    #[test]
    fn certificates_exist_where_the_theory_promises_them() {
        let eq = equality_atlas();
        let cert = template_certificate(&eq, SolveMode::Ts).unwrap();
        assert!(matches!(
            cert,
            Some(WidthCertificate::TotallySymmetric { .. })
        ));
        let henson = henson_atlas(3);
        assert!(template_certificate(&henson, SolveMode::Ts)
            .unwrap()
            .is_some());
        let fourary = random_graph_fourary_atlas();
        assert!(template_certificate(&fourary, SolveMode::Wnu)
            .unwrap()
            .is_some());
    }

    #[test]
    fn minimality_transfer_on_a_seeded_fixture() {
        let atlas = arc(equality_atlas());
        let raw = gen_random_instance(&atlas, 5, 6, 17, Some(&["eq", "neq"])).unwrap();
        let (inst, _) = normalize(&atlas, &raw).unwrap();
        let min = establish_minimality(&inst, 4, 6).unwrap();
        if !min.is_trivial() {
            let verdict = check_minimality_transfer(&min, 2, 3, 2).unwrap();
            assert!(verdict.is_minimal(), "{verdict:?}");
        }
        // the stamp is mandatory
        assert!(matches!(
            check_minimality_transfer(&inst, 2, 3, 2),
            Err(ReductionError::MissingStamp(4, 6))
        ));
    }

    #[test]
    fn witness_files_roundtrip() {
        let atlas = arc(equivalence_atlas());
        let raw = RawInstance {
            variables: vars(&["p", "q", "r"]),
            constraints: vec![apply("eqv", &["p", "q"]), apply("neqv", &["q", "r"])],
        };
        let (inst, _) = normalize(&atlas, &raw).unwrap();
        let solved = solve(&inst, SolveMode::Ts, None).unwrap();
        let Verdict::Sat(w) = solved.verdict else {
            panic!("expected SAT");
        };
        let json = witness_to_json(&solved.minimized, &w);
        let (back, vars) = witness_from_json(&atlas, &json).unwrap();
        assert_eq!(back, w);
        assert_eq!(vars, solved.minimized.variables());
        verify_witness(&solved.minimized, &back).unwrap();
    }
}
