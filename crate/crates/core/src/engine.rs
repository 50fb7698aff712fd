//! The `(k, l)`-minimality fixpoint engine and a finite-domain backtracker.
//!
//! An [`Instance`] holds pattern-set constraints over named variables. The
//! engine adds top constraints for uncovered scopes, maintains a shared
//! domain of patterns per small variable subset, and prunes constraints
//! against those domains to a fixpoint. Minimization never merges distinct
//! constraints sharing a scope: such a pair is a projection disagreement that
//! only levels at least as large as the scope are allowed to expose, and
//! collapsing it early would change which level first detects inconsistency.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atlas::{io as atlas_io, AtlasError, Pattern, PatternAtlas};
use crate::combi::subsets;
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("variable `{0}` is not declared")]
    UndeclaredVariable(String),
    #[error("relation `{0}` applied with {1} arguments, expected {2}")]
    ArityMismatch(String, usize, usize),
    #[error("scope must be sorted and duplicate-free")]
    UnsortedScope,
    #[error("capability bound exceeded: requested ({0}, {1}), atlas supports l <= {2}")]
    CapabilityExceeded(usize, usize, usize),
    #[error("bad minimality levels: k = {0} must satisfy 1 <= k <= l = {1}")]
    BadLevels(usize, usize),
    #[error(transparent)]
    Atlas(#[from] AtlasError),
    #[error("instance file error: {0}")]
    Format(String),
    #[error("internal contradiction: {0}")]
    Internal(String),
}

/// Where a constraint came from.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ConstraintOrigin {
    /// Application of a named template relation.
    Relation(String),
    /// Synthetic top constraint introduced by the engine.
    Top,
    /// Explicitly listed pattern set.
    Explicit,
}

impl ConstraintOrigin {
    pub fn as_str(&self) -> &str {
        match self {
            ConstraintOrigin::Relation(name) => name,
            ConstraintOrigin::Top => "synthetic top",
            ConstraintOrigin::Explicit => "explicit",
        }
    }

    fn from_str(s: &str) -> Self {
        match s {
            "synthetic top" => ConstraintOrigin::Top,
            "explicit" => ConstraintOrigin::Explicit,
            other => ConstraintOrigin::Relation(other.to_string()),
        }
    }
}

/// A scoped pattern-set constraint. The scope is a sorted list of variable
/// indices; every allowed pattern lives on `scope.len()` points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Constraint {
    pub scope: Vec<usize>,
    pub allowed: Vec<Pattern>,
    pub origin: ConstraintOrigin,
}

impl Constraint {
    /// Projection onto a sorted subset of the scope, as restriction patterns.
    pub fn project(&self, subset: &[usize]) -> BTreeSet<Pattern> {
        let local = local_positions(&self.scope, subset);
        self.allowed.iter().map(|p| p.restrict(&local)).collect()
    }
}

fn local_positions(scope: &[usize], subset: &[usize]) -> Vec<usize> {
    subset
        .iter()
        .map(|v| scope.binary_search(v).expect("subset of scope"))
        .collect()
}

/// A CSP instance over a pattern atlas.
#[derive(Clone, Debug)]
pub struct Instance {
    atlas: Arc<PatternAtlas>,
    variables: Vec<String>,
    constraints: Vec<Constraint>,
    minimality_level: Option<(usize, usize)>,
}

impl Instance {
    /// Direct construction from already-normalized parts. Variables must be
    /// sorted and unique; scopes sorted. Allowed sets are sorted here.
    pub fn new(
        atlas: Arc<PatternAtlas>,
        variables: Vec<String>,
        mut constraints: Vec<Constraint>,
    ) -> Result<Self, EngineError> {
        let mut sorted = variables.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != variables {
            return Err(EngineError::Format(
                "variables must be sorted and duplicate-free".into(),
            ));
        }
        for c in &mut constraints {
            if c.scope.windows(2).any(|w| w[0] >= w[1]) {
                return Err(EngineError::UnsortedScope);
            }
            if c.scope.iter().any(|&v| v >= variables.len()) {
                return Err(EngineError::Format("scope variable out of range".into()));
            }
            for p in &c.allowed {
                if p.len() != c.scope.len() {
                    return Err(EngineError::Format(
                        "pattern size does not match its scope".into(),
                    ));
                }
            }
            c.allowed.sort();
            c.allowed.dedup();
        }
        Ok(Instance {
            atlas,
            variables,
            constraints,
            minimality_level: None,
        })
    }

    pub fn atlas(&self) -> &Arc<PatternAtlas> {
        &self.atlas
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn var_index(&self, name: &str) -> Result<usize, EngineError> {
        self.variables
            .binary_search_by(|v| v.as_str().cmp(name))
            .map_err(|_| EngineError::UndeclaredVariable(name.into()))
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn minimality_level(&self) -> Option<(usize, usize)> {
        self.minimality_level
    }

    /// True when some constraint has an empty allowed set.
    pub fn is_trivial(&self) -> bool {
        self.constraints.iter().any(|c| c.allowed.is_empty())
    }
}

impl PartialEq for Instance {
    fn eq(&self, other: &Self) -> bool {
        self.atlas.name() == other.atlas.name()
            && self.variables == other.variables
            && self.constraints == other.constraints
            && self.minimality_level == other.minimality_level
    }
}

/// Constraints in input form, before normalization.
#[derive(Clone, Debug)]
pub enum RawConstraint {
    Apply {
        relation: String,
        args: Vec<String>,
    },
    Explicit {
        scope: Vec<String>,
        allowed: Vec<Pattern>,
        origin: ConstraintOrigin,
    },
}

#[derive(Clone, Debug, Default)]
pub struct RawInstance {
    pub variables: Vec<String>,
    pub constraints: Vec<RawConstraint>,
}

/// Converts relation applications into pattern-set constraints, collapsing
/// repeated arguments through the identification machinery, dropping
/// unrealizable patterns, and removing exact duplicates. Returns the
/// normalized instance and a notes log.
pub fn normalize(
    atlas: &Arc<PatternAtlas>,
    raw: &RawInstance,
) -> Result<(Instance, Vec<String>), EngineError> {
    let mut notes = Vec::new();
    let mut variables = raw.variables.clone();
    variables.sort();
    variables.dedup();
    if variables.len() != raw.variables.len() {
        notes.push("duplicate variable declarations collapsed".into());
    }
    let var_index = |name: &str| -> Result<usize, EngineError> {
        variables
            .binary_search_by(|v| v.as_str().cmp(name))
            .map_err(|_| EngineError::UndeclaredVariable(name.into()))
    };

    let mut constraints: Vec<Constraint> = Vec::new();
    for rc in &raw.constraints {
        match rc {
            RawConstraint::Apply { relation, args } => {
                let rel = atlas.relation(relation)?;
                if args.len() != rel.arity {
                    return Err(EngineError::ArityMismatch(
                        relation.clone(),
                        args.len(),
                        rel.arity,
                    ));
                }
                let arg_ids: Vec<usize> =
                    args.iter().map(|a| var_index(a)).collect::<Result<_, _>>()?;
                constraints.push(apply_relation(atlas, relation, &arg_ids)?);
            }
            RawConstraint::Explicit {
                scope,
                allowed,
                origin,
            } => {
                let ids: Vec<usize> =
                    scope.iter().map(|v| var_index(v)).collect::<Result<_, _>>()?;
                if ids.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(EngineError::UnsortedScope);
                }
                let mut kept = Vec::new();
                for p in allowed {
                    atlas.check_pattern(p)?;
                    if p.len() != ids.len() {
                        return Err(EngineError::Format(
                            "pattern size does not match its scope".into(),
                        ));
                    }
                    if atlas.realizable(p) {
                        kept.push(p.clone());
                    } else {
                        notes.push(format!(
                            "unrealizable pattern removed from constraint on {scope:?}"
                        ));
                    }
                }
                kept.sort();
                kept.dedup();
                constraints.push(Constraint {
                    scope: ids,
                    allowed: kept,
                    origin: origin.clone(),
                });
            }
        }
    }

    // exact duplicates collapse; distinct constraints on a shared scope stay
    let before = constraints.len();
    constraints.sort_by(constraint_order);
    constraints.dedup();
    if constraints.len() != before {
        notes.push(format!(
            "{} duplicate constraint(s) collapsed",
            before - constraints.len()
        ));
    }

    Ok((
        Instance {
            atlas: atlas.clone(),
            variables,
            constraints,
            minimality_level: None,
        },
        notes,
    ))
}

fn constraint_order(a: &Constraint, b: &Constraint) -> std::cmp::Ordering {
    (a.scope.len(), &a.scope, &a.origin, &a.allowed)
        .cmp(&(b.scope.len(), &b.scope, &b.origin, &b.allowed))
}

/// Builds the constraint of one relation application. Repeated arguments and
/// declared slot identifications both collapse to a constraint on the
/// distinct variables whose patterns expand into the relation's allowed set.
fn apply_relation(
    atlas: &Arc<PatternAtlas>,
    name: &str,
    args: &[usize],
) -> Result<Constraint, EngineError> {
    let rel = atlas.relation(name)?;
    let mut scope: Vec<usize> = args.to_vec();
    scope.sort_unstable();
    scope.dedup();
    // relation class -> scope position; extra bindings of one class to a
    // second variable force a diagonal pair between the two positions
    let mut class_to_scope = vec![usize::MAX; rel.classes()];
    let mut forced_equal: Vec<(usize, usize)> = Vec::new();
    for (slot, &class) in rel.slot_class.iter().enumerate() {
        let pos = scope.binary_search(&args[slot]).expect("arg in scope");
        if class_to_scope[class] == usize::MAX {
            class_to_scope[class] = pos;
        } else if class_to_scope[class] != pos {
            forced_equal.push((class_to_scope[class].min(pos), class_to_scope[class].max(pos)));
        }
    }

    let candidates = atlas.enumerate(scope.len())?;
    let mut allowed = Vec::new();
    'cand: for q in candidates.iter() {
        for &(a, b) in &forced_equal {
            if !atlas.is_diagonal(q.pair(a, b)) {
                continue 'cand;
            }
        }
        let expanded = expand_pattern(atlas, q, &class_to_scope);
        if rel.allowed.binary_search(&expanded).is_ok() {
            allowed.push(q.clone());
        }
    }
    allowed.sort();
    allowed.dedup();
    Ok(Constraint {
        scope,
        allowed,
        origin: ConstraintOrigin::Relation(name.to_string()),
    })
}

/// Pattern on `point_of.len()` points whose labels are derived from `q` at
/// the listed (possibly repeating) points.
pub(crate) fn expand_pattern(atlas: &PatternAtlas, q: &Pattern, point_of: &[usize]) -> Pattern {
    let n = point_of.len();
    let depth = atlas.k().min(n);
    let mut rows = Vec::with_capacity(depth);
    for m in 1..=depth {
        let mut row = Vec::new();
        for s in subsets(n, m) {
            let tuple: Vec<usize> = s.iter().map(|&i| point_of[i]).collect();
            row.push(atlas.derived_label(q, &tuple));
        }
        rows.push(row);
    }
    Pattern::from_labels(n, rows).expect("expanded shape")
}

#[derive(Clone, Debug)]
enum Cells {
    /// All realizable patterns on the scope; kept symbolic until pruned.
    Top,
    Pats(Vec<Pattern>),
}

#[derive(Clone, Debug, PartialEq)]
enum Dom {
    Full,
    Set(BTreeSet<Vec<u16>>),
}

/// Computes the equivalent `(k, l)`-minimal instance.
///
/// Adds a lazily materialized top constraint for every uncovered scope of at
/// most `l` variables, then runs worklist propagation over shared per-subset
/// pattern domains until fixpoint, smallest scopes first. The solution set is
/// preserved and the result carries a minimality stamp.
///
/// Worst case the engine materializes every realizable pattern on every
/// scope: over `n` variables that is `sum over m <= l` of
/// `C(n, m) * |patterns(m)|` stored patterns, and each propagation round
/// touches each of them once per covered subset. Termination is guaranteed
/// because domains and allowed sets only ever shrink.
pub fn establish_minimality(
    instance: &Instance,
    k: usize,
    l: usize,
) -> Result<Instance, EngineError> {
    if k == 0 || k > l {
        return Err(EngineError::BadLevels(k, l));
    }
    let atlas = &instance.atlas;
    if l > atlas.capability_bound() {
        return Err(EngineError::CapabilityExceeded(
            k,
            l,
            atlas.capability_bound(),
        ));
    }
    let n = instance.variables.len();
    let top_limit = l.min(n);

    struct Work {
        scope: Vec<usize>,
        cells: Cells,
        origin: ConstraintOrigin,
        subs: Vec<Vec<usize>>,
    }

    let sub_scopes = |scope: &[usize]| -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for m in 1..=k.min(scope.len()) {
            for s in subsets(scope.len(), m) {
                out.push(s.iter().map(|&i| scope[i]).collect());
            }
        }
        out
    };

    let mut works: Vec<Work> = instance
        .constraints
        .iter()
        .map(|c| Work {
            scope: c.scope.clone(),
            cells: Cells::Pats(c.allowed.clone()),
            origin: c.origin.clone(),
            subs: sub_scopes(&c.scope),
        })
        .collect();
    let covered: BTreeSet<Vec<usize>> = works.iter().map(|w| w.scope.clone()).collect();
    for m in 1..=top_limit {
        for s in subsets(n, m) {
            if !covered.contains(&s) {
                works.push(Work {
                    subs: sub_scopes(&s),
                    scope: s,
                    cells: Cells::Top,
                    origin: ConstraintOrigin::Top,
                });
            }
        }
    }
    works.sort_by(|a, b| {
        (a.scope.len(), &a.scope, &a.origin).cmp(&(b.scope.len(), &b.scope, &b.origin))
    });

    let max_scope = works.iter().map(|w| w.scope.len()).max().unwrap_or(1);
    let lazy_tops_sound = atlas.extension_property_upto(max_scope)?;
    if !lazy_tops_sound {
        for w in works.iter_mut() {
            if matches!(w.cells, Cells::Top) {
                w.cells = Cells::Pats(atlas.enumerate(w.scope.len())?.as_ref().clone());
            }
        }
    }

    let mut incident: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
    for (i, w) in works.iter().enumerate() {
        for s in &w.subs {
            incident.entry(s.clone()).or_default().push(i);
        }
    }
    let mut doms: HashMap<Vec<usize>, Dom> =
        incident.keys().map(|s| (s.clone(), Dom::Full)).collect();

    // smallest scope first, FIFO within a size
    let mut queue: BinaryHeap<Reverse<(usize, u64, usize)>> = BinaryHeap::new();
    let mut queued = vec![false; works.len()];
    let mut seq: u64 = 0;
    for (i, w) in works.iter().enumerate() {
        queue.push(Reverse((w.scope.len(), seq, i)));
        seq += 1;
        queued[i] = true;
    }

    while let Some(Reverse((_, _, wi))) = queue.pop() {
        queued[wi] = false;
        let scope = works[wi].scope.clone();
        let subs = works[wi].subs.clone();

        // a top materializes once some covering domain became restrictive
        if matches!(works[wi].cells, Cells::Top) {
            let needed = subs
                .iter()
                .any(|s| !matches!(doms.get(s), Some(Dom::Full) | None));
            if !needed {
                continue;
            }
            works[wi].cells = Cells::Pats(atlas.enumerate(scope.len())?.as_ref().clone());
        }

        // prune the cells by every covering domain
        if let Cells::Pats(pats) = &mut works[wi].cells {
            for s in &subs {
                if let Some(Dom::Set(dom)) = doms.get(s) {
                    let local = local_positions(&scope, s);
                    pats.retain(|p| dom.contains(&p.restrict(&local).key()));
                }
            }
        }

        // shrink the shared domains to the new projections
        let pats = match &works[wi].cells {
            Cells::Pats(p) => p,
            Cells::Top => unreachable!("materialized above"),
        };
        let projections: Vec<(Vec<usize>, BTreeSet<Vec<u16>>)> = subs
            .iter()
            .map(|s| {
                let local = local_positions(&scope, s);
                (
                    s.clone(),
                    pats.iter().map(|p| p.restrict(&local).key()).collect(),
                )
            })
            .collect();
        for (s, proj) in projections {
            let entry = doms.get_mut(&s).expect("domain exists");
            let shrunk = match entry {
                Dom::Full => {
                    *entry = Dom::Set(proj);
                    true
                }
                Dom::Set(cur) => {
                    if proj.is_superset(cur) {
                        false
                    } else {
                        let inter: BTreeSet<Vec<u16>> =
                            cur.intersection(&proj).cloned().collect();
                        *entry = Dom::Set(inter);
                        true
                    }
                }
            };
            if shrunk {
                for &other in incident.get(&s).into_iter().flatten() {
                    if !queued[other] {
                        queue.push(Reverse((works[other].scope.len(), seq, other)));
                        seq += 1;
                        queued[other] = true;
                    }
                }
            }
        }
    }

    let mut constraints: Vec<Constraint> = Vec::with_capacity(works.len());
    for w in works {
        let allowed = match w.cells {
            Cells::Pats(p) => p,
            Cells::Top => atlas.enumerate(w.scope.len())?.as_ref().clone(),
        };
        constraints.push(Constraint {
            scope: w.scope,
            allowed,
            origin: w.origin,
        });
    }
    constraints.sort_by(constraint_order);

    Ok(Instance {
        atlas: atlas.clone(),
        variables: instance.variables.clone(),
        constraints,
        minimality_level: Some((k, l)),
    })
}

/// Verdict of a minimality check, with a witness on failure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MinimalityVerdict {
    Minimal,
    /// A subset of at most `l` variables contained in no constraint scope.
    ScopeUncovered(Vec<usize>),
    /// Two constraints disagree on their projections to a small subset.
    ProjectionMismatch {
        subset: Vec<usize>,
        first: usize,
        second: usize,
    },
}

impl MinimalityVerdict {
    pub fn is_minimal(&self) -> bool {
        matches!(self, MinimalityVerdict::Minimal)
    }
}

/// Verifies the two minimality conditions.
///
/// Scope coverage is read as containment: a subset counts as covered when it
/// lies inside the scope of some constraint, which is the reading under which
/// minimality transfers to orbit instances. The projection condition is
/// checked literally over every pair of covering constraints.
pub fn is_minimal(instance: &Instance, k: usize, l: usize) -> MinimalityVerdict {
    let n = instance.variables.len();
    for m in 1..=l.min(n) {
        for s in subsets(n, m) {
            if !instance
                .constraints
                .iter()
                .any(|c| s.iter().all(|v| c.scope.binary_search(v).is_ok()))
            {
                return MinimalityVerdict::ScopeUncovered(s);
            }
        }
    }
    for m in 1..=k.min(n) {
        for s in subsets(n, m) {
            let covering: Vec<usize> = instance
                .constraints
                .iter()
                .enumerate()
                .filter(|(_, c)| s.iter().all(|v| c.scope.binary_search(v).is_ok()))
                .map(|(i, _)| i)
                .collect();
            if covering.len() < 2 {
                continue;
            }
            let first = instance.constraints[covering[0]].project(&s);
            for &other in &covering[1..] {
                if instance.constraints[other].project(&s) != first {
                    return MinimalityVerdict::ProjectionMismatch {
                        subset: s,
                        first: covering[0],
                        second: other,
                    };
                }
            }
        }
    }
    MinimalityVerdict::Minimal
}

/// Reproducible random instance over the declared relations. `relations`
/// optionally restricts the sampled relation names.
pub fn gen_random_instance(
    atlas: &Arc<PatternAtlas>,
    n_vars: usize,
    n_constraints: usize,
    seed: u64,
    relations: Option<&[&str]>,
) -> Result<RawInstance, EngineError> {
    assert!(n_vars > 0);
    let pool: Vec<String> = match relations {
        Some(list) => list.iter().map(|s| s.to_string()).collect(),
        None => atlas
            .relations()
            .iter()
            .map(|r| r.name.clone())
            .collect(),
    };
    for name in &pool {
        atlas.relation(name)?;
    }
    let variables: Vec<String> = (0..n_vars).map(|i| format!("v{i:02}")).collect();
    let mut rng = SplitMix64::new(seed);
    let mut picked: Vec<(String, Vec<String>)> = Vec::new();
    let mut attempts = 0;
    while picked.len() < n_constraints && attempts < 100 * n_constraints.max(10) {
        attempts += 1;
        let rel_name = &pool[rng.below(pool.len() as u64) as usize];
        let rel = atlas.relation(rel_name)?;
        if rel.arity > n_vars {
            continue;
        }
        let mut args = rng.distinct_sorted(n_vars, rel.arity);
        for i in (1..args.len()).rev() {
            let j = rng.below((i + 1) as u64) as usize;
            args.swap(i, j);
        }
        let args: Vec<String> = args.into_iter().map(|v| variables[v].clone()).collect();
        let entry = (rel_name.clone(), args);
        if !picked.contains(&entry) {
            picked.push(entry);
        }
    }
    Ok(RawInstance {
        variables,
        constraints: picked
            .into_iter()
            .map(|(relation, args)| RawConstraint::Apply { relation, args })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// finite instances

/// A CSP instance over an explicit finite alphabet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteInstance {
    pub var_names: Vec<String>,
    pub alphabet: Vec<String>,
    pub constraints: Vec<FiniteConstraint>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteConstraint {
    pub scope: Vec<usize>,
    pub tuples: Vec<Vec<u16>>,
}

impl FiniteInstance {
    pub fn is_trivial(&self) -> bool {
        self.constraints.iter().any(|c| c.tuples.is_empty())
    }
}

/// Exhaustive backtracking with per-constraint consistency checks.
/// Deterministic: variables in index order, values ascending.
pub fn search_solution(fi: &FiniteInstance) -> Option<Vec<u16>> {
    let n = fi.var_names.len();
    let d = fi.alphabet.len() as u16;
    if fi.is_trivial() {
        return None;
    }
    if n == 0 {
        return Some(Vec::new());
    }
    let mut touching: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (ci, c) in fi.constraints.iter().enumerate() {
        for &v in &c.scope {
            touching[v].push(ci);
        }
    }

    fn consistent(c: &FiniteConstraint, assign: &[Option<u16>]) -> bool {
        c.tuples.iter().any(|t| {
            c.scope
                .iter()
                .zip(t)
                .all(|(&v, &val)| assign[v].is_none_or(|a| a == val))
        })
    }

    fn rec(
        fi: &FiniteInstance,
        touching: &[Vec<usize>],
        assign: &mut Vec<Option<u16>>,
        v: usize,
        d: u16,
    ) -> bool {
        if v == assign.len() {
            return true;
        }
        for val in 0..d {
            assign[v] = Some(val);
            if touching[v]
                .iter()
                .all(|&ci| consistent(&fi.constraints[ci], assign))
                && rec(fi, touching, assign, v + 1, d)
            {
                return true;
            }
            assign[v] = None;
        }
        false
    }

    let mut assign: Vec<Option<u16>> = vec![None; n];
    if rec(fi, &touching, &mut assign, 0, d) {
        Some(assign.into_iter().map(|a| a.unwrap()).collect())
    } else {
        None
    }
}

/// Minimality check over a finite instance; same reading as [`is_minimal`].
pub fn finite_is_minimal(fi: &FiniteInstance, k: usize, l: usize) -> MinimalityVerdict {
    let n = fi.var_names.len();
    let project = |c: &FiniteConstraint, s: &[usize]| -> BTreeSet<Vec<u16>> {
        let pos: Vec<usize> = s
            .iter()
            .map(|v| c.scope.binary_search(v).expect("subset of scope"))
            .collect();
        c.tuples
            .iter()
            .map(|t| pos.iter().map(|&p| t[p]).collect())
            .collect()
    };
    for m in 1..=l.min(n) {
        for s in subsets(n, m) {
            if !fi
                .constraints
                .iter()
                .any(|c| s.iter().all(|v| c.scope.binary_search(v).is_ok()))
            {
                return MinimalityVerdict::ScopeUncovered(s);
            }
        }
    }
    for m in 1..=k.min(n) {
        for s in subsets(n, m) {
            let covering: Vec<usize> = fi
                .constraints
                .iter()
                .enumerate()
                .filter(|(_, c)| s.iter().all(|v| c.scope.binary_search(v).is_ok()))
                .map(|(i, _)| i)
                .collect();
            if covering.len() < 2 {
                continue;
            }
            let first = project(&fi.constraints[covering[0]], &s);
            for &other in &covering[1..] {
                if project(&fi.constraints[other], &s) != first {
                    return MinimalityVerdict::ProjectionMismatch {
                        subset: s,
                        first: covering[0],
                        second: other,
                    };
                }
            }
        }
    }
    MinimalityVerdict::Minimal
}

// ---------------------------------------------------------------------------
// instance files

pub const INSTANCE_FORMAT: &str = "relwidth.instance/v1";

#[derive(Serialize, Deserialize)]
pub struct InstanceDoc {
    pub format: String,
    pub atlas: String,
    pub variables: Vec<String>,
    pub constraints: Vec<ConstraintDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minimality_level: Option<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstraintDoc {
    Apply {
        relation: String,
        args: Vec<String>,
    },
    Explicit {
        scope: Vec<String>,
        origin: String,
        allowed: Vec<atlas_io::PatternDoc>,
    },
}

pub fn raw_to_doc(atlas: &PatternAtlas, raw: &RawInstance) -> InstanceDoc {
    InstanceDoc {
        format: INSTANCE_FORMAT.to_string(),
        atlas: atlas.name().to_string(),
        variables: raw.variables.clone(),
        constraints: raw
            .constraints
            .iter()
            .map(|c| match c {
                RawConstraint::Apply { relation, args } => ConstraintDoc::Apply {
                    relation: relation.clone(),
                    args: args.clone(),
                },
                RawConstraint::Explicit {
                    scope,
                    allowed,
                    origin,
                } => ConstraintDoc::Explicit {
                    scope: scope.clone(),
                    origin: origin.as_str().to_string(),
                    allowed: allowed
                        .iter()
                        .map(|p| atlas_io::pattern_to_doc(atlas, p))
                        .collect(),
                },
            })
            .collect(),
        minimality_level: None,
    }
}

pub fn instance_to_doc(instance: &Instance) -> InstanceDoc {
    let atlas = instance.atlas();
    InstanceDoc {
        format: INSTANCE_FORMAT.to_string(),
        atlas: atlas.name().to_string(),
        variables: instance.variables.clone(),
        constraints: instance
            .constraints
            .iter()
            .map(|c| ConstraintDoc::Explicit {
                scope: c
                    .scope
                    .iter()
                    .map(|&v| instance.variables[v].clone())
                    .collect(),
                origin: c.origin.as_str().to_string(),
                allowed: c
                    .allowed
                    .iter()
                    .map(|p| atlas_io::pattern_to_doc(atlas, p))
                    .collect(),
            })
            .collect(),
        minimality_level: instance.minimality_level,
    }
}

/// Loads an instance document against an atlas; entries run through
/// normalization. A recorded minimality stamp survives only when nothing was
/// dropped on the way in.
pub fn instance_from_doc(
    atlas: &Arc<PatternAtlas>,
    doc: &InstanceDoc,
) -> Result<(Instance, Vec<String>), EngineError> {
    if doc.format != INSTANCE_FORMAT {
        return Err(EngineError::Format(format!(
            "unsupported instance format `{}`, expected `{INSTANCE_FORMAT}`",
            doc.format
        )));
    }
    let mut raw = RawInstance {
        variables: doc.variables.clone(),
        constraints: Vec::new(),
    };
    for c in &doc.constraints {
        match c {
            ConstraintDoc::Apply { relation, args } => {
                raw.constraints.push(RawConstraint::Apply {
                    relation: relation.clone(),
                    args: args.clone(),
                });
            }
            ConstraintDoc::Explicit {
                scope,
                origin,
                allowed,
            } => {
                let mut pats = Vec::with_capacity(allowed.len());
                for p in allowed {
                    pats.push(atlas_io::pattern_from_doc(atlas, p).map_err(EngineError::Atlas)?);
                }
                raw.constraints.push(RawConstraint::Explicit {
                    scope: scope.clone(),
                    allowed: pats,
                    origin: ConstraintOrigin::from_str(origin),
                });
            }
        }
    }
    let (mut instance, notes) = normalize(atlas, &raw)?;
    if notes.is_empty() {
        instance.minimality_level = doc.minimality_level;
    }
    Ok((instance, notes))
}

pub fn instance_to_json(instance: &Instance) -> String {
    serde_json::to_string_pretty(&instance_to_doc(instance)).expect("instance serialization")
}

pub fn raw_to_json(atlas: &PatternAtlas, raw: &RawInstance) -> String {
    serde_json::to_string_pretty(&raw_to_doc(atlas, raw)).expect("instance serialization")
}

pub fn instance_from_json(
    atlas: &Arc<PatternAtlas>,
    text: &str,
) -> Result<(Instance, Vec<String>), EngineError> {
    let doc: InstanceDoc =
        serde_json::from_str(text).map_err(|e| EngineError::Format(e.to_string()))?;
    instance_from_doc(atlas, &doc)
}


pub const FINITE_FORMAT: &str = "relwidth.finite/v1";

#[derive(Serialize, Deserialize)]
pub struct FiniteInstanceDoc {
    pub format: String,
    pub var_names: Vec<String>,
    pub alphabet: Vec<String>,
    pub constraints: Vec<FiniteConstraintDoc>,
}

#[derive(Serialize, Deserialize)]
pub struct FiniteConstraintDoc {
    pub scope: Vec<usize>,
    pub tuples: Vec<Vec<u16>>,
}

pub fn finite_to_json(fi: &FiniteInstance) -> String {
    let doc = FiniteInstanceDoc {
        format: FINITE_FORMAT.to_string(),
        var_names: fi.var_names.clone(),
        alphabet: fi.alphabet.clone(),
        constraints: fi
            .constraints
            .iter()
            .map(|c| FiniteConstraintDoc {
                scope: c.scope.clone(),
                tuples: c.tuples.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("finite instance serialization")
}

pub fn finite_from_json(text: &str) -> Result<FiniteInstance, EngineError> {
    let doc: FiniteInstanceDoc =
        serde_json::from_str(text).map_err(|e| EngineError::Format(e.to_string()))?;
    if doc.format != FINITE_FORMAT {
        return Err(EngineError::Format(format!(
            "unsupported finite-instance format `{}`, expected `{FINITE_FORMAT}`",
            doc.format
        )));
    }
    let n = doc.var_names.len();
    let d = doc.alphabet.len() as u16;
    for c in &doc.constraints {
        if c.scope.windows(2).any(|w| w[0] >= w[1]) || c.scope.iter().any(|&v| v >= n) {
            return Err(EngineError::Format("malformed finite scope".into()));
        }
        for t in &c.tuples {
            if t.len() != c.scope.len() || t.iter().any(|&v| v >= d) {
                return Err(EngineError::Format("malformed finite tuple".into()));
            }
        }
    }
    Ok(FiniteInstance {
        var_names: doc.var_names,
        alphabet: doc.alphabet,
        constraints: doc
            .constraints
            .into_iter()
            .map(|c| FiniteConstraint {
                scope: c.scope,
                tuples: {
                    let mut t = c.tuples;
                    t.sort();
                    t.dedup();
                    t
                },
            })
            .collect(),
    })
}
