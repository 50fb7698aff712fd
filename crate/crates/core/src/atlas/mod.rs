//! Finite presentations of homogeneous templates.
//!
//! A [`PatternAtlas`] presents a template through orbit labels for small
//! tuples, subtype tables that move labels along slot rearrangements, a
//! forbidden-pattern family that decides realizability, and named relation
//! definitions. No infinite model is ever materialized: realizability of a
//! pattern is the absence of forbidden sub-patterns, which is exact for the
//! bounded templates shipped in [`builtin`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::combi::{binomial, permutations, subsets};

pub mod builtin;
pub mod io;
mod pattern;

pub use pattern::{LabelId, Pattern};

/// Slot rearrangement: transforms an `source_arity`-tuple `t` into the tuple
/// `(t[map[0]], .., t[map[r-1]])`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotMap {
    pub source_arity: usize,
    pub map: Vec<u8>,
}

impl SlotMap {
    pub fn new(source_arity: usize, map: Vec<u8>) -> Self {
        debug_assert!(map.iter().all(|&i| (i as usize) < source_arity));
        SlotMap { source_arity, map }
    }

    pub fn identity(arity: usize) -> Self {
        SlotMap {
            source_arity: arity,
            map: (0..arity as u8).collect(),
        }
    }

    pub fn result_arity(&self) -> usize {
        self.map.len()
    }

    /// Slot map of applying `self` and then `next`.
    pub fn then(&self, next: &SlotMap) -> SlotMap {
        debug_assert_eq!(next.source_arity, self.result_arity());
        SlotMap {
            source_arity: self.source_arity,
            map: next.map.iter().map(|&i| self.map[i as usize]).collect(),
        }
    }
}

/// How a forbidden pattern blocks realizability.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ForbiddenKind {
    /// No injective label-preserving map into the tested pattern may exist.
    Substructure,
    /// No label-preserving map at all (collapses allowed) may exist.
    Homomorphism,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Forbidden {
    pub pattern: Pattern,
    pub kind: ForbiddenKind,
}

/// A named relation: arity, identification partition of the argument slots,
/// and the allowed patterns on the partition classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationDef {
    pub name: String,
    pub arity: usize,
    /// `slot_class[i]` is the point index argument slot `i` collapses to.
    /// Classes are numbered by first occurrence.
    pub slot_class: Vec<usize>,
    pub allowed: Vec<Pattern>,
}

impl RelationDef {
    pub fn classes(&self) -> usize {
        self.slot_class.iter().copied().max().map_or(0, |m| m + 1)
    }
}

/// Template family tag; drives witness materialization and carries the
/// structural knowledge validated by the test suites.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Family {
    Equality,
    Equivalence,
    Henson(usize),
    RandomGraph,
    RandomGraphFourary,
    Partition(Vec<BlockKind>),
    Mmsnp { colors: Vec<String> },
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Singleton,
    Infinite,
}

#[derive(Debug, Error)]
pub enum AtlasError {
    #[error("unsupported homogeneity arity {0}: enumeration handles k <= 2")]
    UnsupportedArity(usize),
    #[error("pattern incoherent: {0}")]
    IncoherentPattern(String),
    #[error("invalid atlas: {0}")]
    Invalid(String),
    #[error("unknown label `{0}` at arity {1}")]
    UnknownLabel(String, usize),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("atlas file error: {0}")]
    Format(String),
}

/// Outcome of [`PatternAtlas::validate`]: hard violations plus advisory notes.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Finite presentation of a homogeneous bounded template.
#[derive(Debug)]
pub struct PatternAtlas {
    name: String,
    k: usize,
    ell: usize,
    labels: Vec<Vec<String>>,
    tables: BTreeMap<SlotMap, Vec<LabelId>>,
    diagonal: Vec<LabelId>,
    forbidden: Vec<Forbidden>,
    relations: Vec<RelationDef>,
    width_params: (usize, usize),
    family: Family,
    enum_cache: Mutex<HashMap<usize, Arc<Vec<Pattern>>>>,
    extension_cache: Mutex<HashMap<usize, bool>>,
}

impl PartialEq for PatternAtlas {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.k == other.k
            && self.ell == other.ell
            && self.labels == other.labels
            && self.tables == other.tables
            && self.diagonal == other.diagonal
            && self.forbidden == other.forbidden
            && self.relations == other.relations
            && self.width_params == other.width_params
            && self.family == other.family
    }
}

impl Clone for PatternAtlas {
    fn clone(&self) -> Self {
        PatternAtlas {
            name: self.name.clone(),
            k: self.k,
            ell: self.ell,
            labels: self.labels.clone(),
            tables: self.tables.clone(),
            diagonal: self.diagonal.clone(),
            forbidden: self.forbidden.clone(),
            relations: self.relations.clone(),
            width_params: self.width_params,
            family: self.family.clone(),
            enum_cache: Mutex::new(HashMap::new()),
            extension_cache: Mutex::new(HashMap::new()),
        }
    }
}

impl PatternAtlas {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Homogeneity arity: orbit labels are stored for subsets up to this size.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Boundedness arity: forbidden patterns have at most this many points.
    pub fn ell(&self) -> usize {
        self.ell
    }

    /// The `(k, l)` pair assigned to this family for width statements.
    pub fn width_params(&self) -> (usize, usize) {
        self.width_params
    }

    /// Largest constraint scope the engine will create for this atlas.
    pub fn capability_bound(&self) -> usize {
        (3 * self.k).max(self.ell)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn label_count(&self, arity: usize) -> usize {
        self.labels[arity - 1].len()
    }

    pub fn label_name(&self, arity: usize, id: LabelId) -> &str {
        &self.labels[arity - 1][id as usize]
    }

    pub fn label_names(&self, arity: usize) -> &[String] {
        &self.labels[arity - 1]
    }

    pub fn label_index(&self, arity: usize, name: &str) -> Result<LabelId, AtlasError> {
        self.labels[arity - 1]
            .iter()
            .position(|l| l == name)
            .map(|i| i as LabelId)
            .ok_or_else(|| AtlasError::UnknownLabel(name.into(), arity))
    }

    pub fn relations(&self) -> &[RelationDef] {
        &self.relations
    }

    pub fn relation(&self, name: &str) -> Result<&RelationDef, AtlasError> {
        self.relations
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| AtlasError::UnknownRelation(name.into()))
    }

    pub fn diagonal_labels(&self) -> &[LabelId] {
        &self.diagonal
    }

    pub fn is_diagonal(&self, label: LabelId) -> bool {
        self.diagonal.binary_search(&label).is_ok()
    }

    pub fn forbidden(&self) -> &[Forbidden] {
        &self.forbidden
    }

    fn table(&self, map: &SlotMap) -> &[LabelId] {
        &self.tables[map]
    }

    /// Label of `t . map` given the label of `t`.
    pub fn apply_map(&self, map: &SlotMap, label: LabelId) -> LabelId {
        self.table(map)[label as usize]
    }

    /// Label of the constant pair `(x, x)` from the label of `x`.
    pub fn double(&self, unary: LabelId) -> LabelId {
        self.apply_map(&SlotMap::new(1, vec![0, 0]), unary)
    }

    /// Label of the reversed pair.
    pub fn swap_pair(&self, label: LabelId) -> LabelId {
        self.apply_map(&SlotMap::new(2, vec![1, 0]), label)
    }

    /// Unary label of coordinate `pos` of a pair.
    pub fn pair_coord(&self, label: LabelId, pos: usize) -> LabelId {
        self.apply_map(&SlotMap::new(2, vec![pos as u8]), label)
    }

    /// Label of an arbitrary tuple (repeats allowed) over a pattern's points.
    ///
    /// The tuple length and the number of distinct entries must both be at
    /// most the pattern's stored arity.
    pub fn derived_label(&self, host: &Pattern, tuple: &[usize]) -> LabelId {
        let mut distinct: Vec<usize> = tuple.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let map: Vec<u8> = tuple
            .iter()
            .map(|t| distinct.binary_search(t).unwrap() as u8)
            .collect();
        let base = host.subset_label(&distinct);
        self.apply_map(&SlotMap::new(distinct.len(), map), base)
    }

    /// Checks shape, label ranges, and projection coherence of a pattern.
    pub fn check_pattern(&self, p: &Pattern) -> Result<(), AtlasError> {
        let depth = self.k.min(p.len());
        if p.max_arity() != depth {
            return Err(AtlasError::IncoherentPattern(format!(
                "stores arities up to {}, expected {}",
                p.max_arity(),
                depth
            )));
        }
        for m in 1..=depth {
            for (rank, s) in subsets(p.len(), m).iter().enumerate() {
                let l = p.label_at(m, rank);
                if (l as usize) >= self.label_count(m) {
                    return Err(AtlasError::IncoherentPattern(format!(
                        "label {l} out of range at arity {m}"
                    )));
                }
                // every projection to a smaller stored subset must agree
                for drop in 0..m {
                    if m == 1 {
                        break;
                    }
                    let keep: Vec<u8> = (0..m as u8).filter(|&i| i as usize != drop).collect();
                    let projected = self.apply_map(&SlotMap::new(m, keep), l);
                    let sub: Vec<usize> = s
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != drop)
                        .map(|(_, &v)| v)
                        .collect();
                    let stored = p.subset_label(&sub);
                    if projected != stored {
                        return Err(AtlasError::IncoherentPattern(format!(
                            "subset {s:?} label {} projects to {} on {sub:?}, stored {}",
                            self.label_name(m, l),
                            self.label_name(m - 1, projected),
                            self.label_name(m - 1, stored)
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// The pattern with points renamed by `perm` (`perm[i]` is the new index
    /// of point `i`).
    pub fn permuted(&self, p: &Pattern, perm: &[usize]) -> Pattern {
        let n = p.len();
        let mut inverse = vec![0usize; n];
        for (i, &pi) in perm.iter().enumerate() {
            inverse[pi] = i;
        }
        let depth = p.max_arity();
        let mut rows = Vec::with_capacity(depth);
        for m in 1..=depth {
            let mut row = Vec::with_capacity(binomial(n, m));
            for t in subsets(n, m) {
                let pre: Vec<usize> = t.iter().map(|&q| inverse[q]).collect();
                row.push(self.derived_label(p, &pre));
            }
            rows.push(row);
        }
        Pattern::from_labels(n, rows).expect("permuted pattern keeps shape")
    }

    /// Lexicographically smallest relabeling of `p`; used to deduplicate
    /// forbidden patterns up to isomorphism.
    pub fn canonical(&self, p: &Pattern) -> Pattern {
        permutations(p.len())
            .iter()
            .map(|perm| self.permuted(p, perm))
            .min()
            .expect("at least the identity permutation")
    }

    /// Does `small` embed into `host` by an injective label-preserving map?
    ///
    /// With `must_cover = Some(q)` only maps whose image contains point `q`
    /// are considered.
    pub fn embeds(&self, small: &Pattern, host: &Pattern, must_cover: Option<usize>) -> bool {
        if small.len() > host.len() {
            return false;
        }
        let mut assignment = vec![usize::MAX; small.len()];
        let mut used = vec![false; host.len()];
        self.embed_rec(small, host, 0, &mut assignment, &mut used, must_cover)
    }

    #[allow(clippy::needless_range_loop)]
    fn embed_rec(
        &self,
        small: &Pattern,
        host: &Pattern,
        next: usize,
        assignment: &mut [usize],
        used: &mut [bool],
        must_cover: Option<usize>,
    ) -> bool {
        if next == small.len() {
            return must_cover.is_none_or(|q| assignment.contains(&q));
        }
        'cand: for c in 0..host.len() {
            if used[c] {
                continue;
            }
            if small.unary(next) != host.unary(c) {
                continue;
            }
            // pairs against already placed points
            if small.max_arity() >= 2 {
                for prev in 0..next {
                    let want = small.pair(prev, next);
                    let (a, b) = (assignment[prev], c);
                    let got = if a < b {
                        host.pair(a, b)
                    } else {
                        self.swap_pair(host.pair(b, a))
                    };
                    if want != got {
                        continue 'cand;
                    }
                }
            }
            assignment[next] = c;
            used[c] = true;
            if self.embed_rec(small, host, next + 1, assignment, used, must_cover) {
                return true;
            }
            assignment[next] = usize::MAX;
            used[c] = false;
        }
        false
    }

    /// Does `small` map into `host` by an arbitrary label-preserving map?
    /// Identified points must sit on diagonal labels of `host`'s typing.
    pub fn maps_hom(&self, small: &Pattern, host: &Pattern, must_cover: Option<usize>) -> bool {
        let mut assignment = vec![usize::MAX; small.len()];
        self.hom_rec(small, host, 0, &mut assignment, must_cover)
    }

    #[allow(clippy::needless_range_loop)]
    fn hom_rec(
        &self,
        small: &Pattern,
        host: &Pattern,
        next: usize,
        assignment: &mut [usize],
        must_cover: Option<usize>,
    ) -> bool {
        if next == small.len() {
            return must_cover.is_none_or(|q| assignment.contains(&q));
        }
        'cand: for c in 0..host.len() {
            if small.unary(next) != host.unary(c) {
                continue;
            }
            if small.max_arity() >= 2 {
                for prev in 0..next {
                    let want = small.pair(prev, next);
                    let got = self.derived_label(host, &[assignment[prev], c]);
                    if want != got {
                        continue 'cand;
                    }
                }
            }
            assignment[next] = c;
            if self.hom_rec(small, host, next + 1, assignment, must_cover) {
                return true;
            }
            assignment[next] = usize::MAX;
        }
        false
    }

    /// Realizability: no forbidden pattern embeds (or maps, for
    /// homomorphism-forbidden entries) into `p`.
    pub fn realizable(&self, p: &Pattern) -> bool {
        self.realizable_from(p, None)
    }

    fn realizable_from(&self, p: &Pattern, newest: Option<usize>) -> bool {
        for f in &self.forbidden {
            if f.pattern.len() > p.len() {
                continue;
            }
            let hit = match f.kind {
                ForbiddenKind::Substructure => self.embeds(&f.pattern, p, newest),
                ForbiddenKind::Homomorphism => self.maps_hom(&f.pattern, p, newest),
            };
            if hit {
                return false;
            }
        }
        true
    }

    /// Every realizable pattern on `n` points, in a deterministic order.
    ///
    /// Backtracks point by point over unary and pair labels, pruning with the
    /// forbidden set; results are cached per size.
    pub fn enumerate(&self, n: usize) -> Result<Arc<Vec<Pattern>>, AtlasError> {
        if self.k > 2 {
            return Err(AtlasError::UnsupportedArity(self.k));
        }
        if n == 0 {
            return Err(AtlasError::Invalid("cannot enumerate on 0 points".into()));
        }
        if let Some(hit) = self.enum_cache.lock().unwrap().get(&n) {
            return Ok(hit.clone());
        }
        let out = Arc::new(self.enumerate_uncached(n, true));
        self.enum_cache.lock().unwrap().insert(n, out.clone());
        Ok(out)
    }

    /// Like [`enumerate`](Self::enumerate) but ignoring the forbidden set;
    /// used when compiling forbidden families.
    pub(crate) fn enumerate_raw(&self, n: usize) -> Vec<Pattern> {
        self.enumerate_uncached(n, false)
    }

    fn enumerate_uncached(&self, n: usize, prune: bool) -> Vec<Pattern> {
        let n1 = self.label_count(1);
        // pair labels compatible with a given (left, right) unary pair
        let compat: Vec<Vec<Vec<LabelId>>> = if self.k >= 2 {
            (0..n1)
                .map(|a| {
                    (0..n1)
                        .map(|b| {
                            (0..self.label_count(2) as LabelId)
                                .filter(|&l| {
                                    self.pair_coord(l, 0) == a as LabelId
                                        && self.pair_coord(l, 1) == b as LabelId
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };

        let mut unary = vec![0 as LabelId; n];
        let mut grid = vec![0 as LabelId; n * n];
        let mut out = Vec::new();
        self.enum_point(n, 0, prune, &compat, &mut unary, &mut grid, &mut out);
        // backtracking emits point-major; consumers rely on pattern order
        out.sort();
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn enum_point(
        &self,
        n: usize,
        p: usize,
        prune: bool,
        compat: &[Vec<Vec<LabelId>>],
        unary: &mut Vec<LabelId>,
        grid: &mut Vec<LabelId>,
        out: &mut Vec<Pattern>,
    ) {
        if p == n {
            out.push(self.assemble(n, unary, grid));
            return;
        }
        for u in 0..self.label_count(1) as LabelId {
            unary[p] = u;
            if self.k == 1 || p == 0 {
                if !prune || self.partial_ok(p, unary, grid) {
                    self.enum_point(n, p + 1, prune, compat, unary, grid, out);
                }
            } else {
                self.enum_pairs(n, p, 0, prune, compat, unary, grid, out);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn enum_pairs(
        &self,
        n: usize,
        p: usize,
        i: usize,
        prune: bool,
        compat: &[Vec<Vec<LabelId>>],
        unary: &mut Vec<LabelId>,
        grid: &mut Vec<LabelId>,
        out: &mut Vec<Pattern>,
    ) {
        if i == p {
            if !prune || self.partial_ok(p, unary, grid) {
                self.enum_point(n, p + 1, prune, compat, unary, grid, out);
            }
            return;
        }
        let choices = compat[unary[i] as usize][unary[p] as usize].clone();
        for l in choices {
            grid[i * n + p] = l;
            self.enum_pairs(n, p, i + 1, prune, compat, unary, grid, out);
        }
    }

    /// Forbidden check for the partial pattern on points `0..=p`, looking only
    /// at embeddings that involve the newest point.
    fn partial_ok(&self, p: usize, unary: &[LabelId], grid: &[LabelId]) -> bool {
        let n = unary.len();
        let m = p + 1;
        let mut rows = vec![unary[..m].to_vec()];
        if self.k >= 2 && m >= 2 {
            let mut pairs = Vec::with_capacity(binomial(m, 2));
            for i in 0..m {
                for j in i + 1..m {
                    pairs.push(grid[i * n + j]);
                }
            }
            rows.push(pairs);
        }
        let partial = Pattern::from_labels(m, rows).expect("partial shape");
        self.realizable_from(&partial, Some(p))
    }

    fn assemble(&self, n: usize, unary: &[LabelId], grid: &[LabelId]) -> Pattern {
        let mut rows = vec![unary.to_vec()];
        if self.k >= 2 && n >= 2 {
            let mut pairs = Vec::with_capacity(binomial(n, 2));
            for i in 0..n {
                for j in i + 1..n {
                    pairs.push(grid[i * n + j]);
                }
            }
            rows.push(pairs);
        }
        Pattern::from_labels(n, rows).expect("assembled shape")
    }

    /// Collapses points according to `class_of` (values `0..n_new`, surjective
    /// in order of first occurrence). Returns `None` when identified points do
    /// not sit on diagonal pair labels.
    pub fn collapse(&self, p: &Pattern, class_of: &[usize], n_new: usize) -> Option<Pattern> {
        debug_assert_eq!(class_of.len(), p.len());
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                if class_of[i] == class_of[j] && !self.is_diagonal(p.pair(i, j)) {
                    return None;
                }
            }
        }
        let mut rep = vec![usize::MAX; n_new];
        for (i, &c) in class_of.iter().enumerate() {
            if rep[c] == usize::MAX {
                rep[c] = i;
            }
        }
        let depth = self.k.min(n_new);
        let mut rows = Vec::with_capacity(depth);
        for m in 1..=depth {
            let mut row = Vec::with_capacity(binomial(n_new, m));
            for t in subsets(n_new, m) {
                let tuple: Vec<usize> = t.iter().map(|&c| rep[c]).collect();
                row.push(self.derived_label(p, &tuple));
            }
            rows.push(row);
        }
        let collapsed = Pattern::from_labels(n_new, rows).expect("collapsed shape");
        debug_assert!(self.check_pattern(&collapsed).is_ok());
        Some(collapsed)
    }

    /// Whether every realizable pattern of size `< upto` extends to one more
    /// point. Lazily verified and cached; lets the engine keep unpruned top
    /// constraints symbolic.
    pub fn extension_property_upto(&self, upto: usize) -> Result<bool, AtlasError> {
        if let Some(&hit) = self.extension_cache.lock().unwrap().get(&upto) {
            return Ok(hit);
        }
        let mut ok = true;
        'sizes: for m in 1..upto {
            let smaller = self.enumerate(m)?;
            let bigger = self.enumerate(m + 1)?;
            let restricted: BTreeSet<Pattern> = bigger
                .iter()
                .map(|p| p.restrict(&(0..m).collect::<Vec<_>>()))
                .collect();
            for p in smaller.iter() {
                if !restricted.contains(p) {
                    ok = false;
                    break 'sizes;
                }
            }
        }
        self.extension_cache.lock().unwrap().insert(upto, ok);
        Ok(ok)
    }

    /// Checks every structural invariant and reports violations with
    /// witnesses. Advisory observations land in `notes`.
    pub fn validate(&self) -> ValidationReport {
        let mut rep = ValidationReport::default();
        if self.k == 0 {
            rep.errors.push("k must be positive".into());
            return rep;
        }
        if self.ell < self.k {
            rep.errors
                .push(format!("ell = {} below k = {}", self.ell, self.k));
        }
        if self.labels.len() != self.k {
            rep.errors.push(format!(
                "expected label sets for arities 1..={}, found {}",
                self.k,
                self.labels.len()
            ));
            return rep;
        }
        for (i, row) in self.labels.iter().enumerate() {
            if row.is_empty() {
                rep.errors.push(format!("no labels at arity {}", i + 1));
            }
        }

        // totality of the subtype tables over every slot map between arities <= k
        let mut expected: Vec<SlotMap> = Vec::new();
        for src in 1..=self.k {
            for res in 1..=self.k {
                let mut stack = vec![Vec::new()];
                while let Some(cur) = stack.pop() {
                    if cur.len() == res {
                        expected.push(SlotMap::new(src, cur));
                        continue;
                    }
                    for v in (0..src as u8).rev() {
                        let mut nxt = cur.clone();
                        nxt.push(v);
                        stack.push(nxt);
                    }
                }
            }
        }
        for m in &expected {
            match self.tables.get(m) {
                None => rep
                    .errors
                    .push(format!("missing subtype table for {m:?} (non-total)")),
                Some(t) => {
                    if t.len() != self.label_count(m.source_arity) {
                        rep.errors.push(format!(
                            "table for {m:?} has {} entries, expected {}",
                            t.len(),
                            self.label_count(m.source_arity)
                        ));
                    }
                    let bound = self.label_count(m.result_arity()) as LabelId;
                    if let Some(bad) = t.iter().find(|&&v| v >= bound) {
                        rep.errors
                            .push(format!("table for {m:?} maps outside arity: {bad}"));
                    }
                }
            }
        }
        if !rep.errors.is_empty() {
            return rep;
        }

        // identity and functoriality
        for arity in 1..=self.k {
            let id = SlotMap::identity(arity);
            for l in 0..self.label_count(arity) as LabelId {
                if self.apply_map(&id, l) != l {
                    rep.errors.push(format!(
                        "identity table at arity {arity} moves label {}",
                        self.label_name(arity, l)
                    ));
                }
            }
        }
        for f in &expected {
            for g in &expected {
                if g.source_arity != f.result_arity() {
                    continue;
                }
                let h = f.then(g);
                for l in 0..self.label_count(f.source_arity) as LabelId {
                    let direct = self.apply_map(&h, l);
                    let staged = self.apply_map(g, self.apply_map(f, l));
                    if direct != staged {
                        rep.errors.push(format!(
                            "functoriality fails at {f:?} then {g:?} on label {}",
                            self.label_name(f.source_arity, l)
                        ));
                    }
                }
            }
        }

        // diagonal set is exactly the image of the doubling map
        if self.k >= 2 {
            let mut image: Vec<LabelId> = (0..self.label_count(1) as LabelId)
                .map(|u| self.double(u))
                .collect();
            image.sort_unstable();
            image.dedup();
            if image != self.diagonal {
                rep.errors.push(format!(
                    "diagonal labels {:?} differ from doubling image {:?}",
                    self.diagonal, image
                ));
            }
        }

        // forbidden patterns: coherent, within ell, self-refuting
        for (i, f) in self.forbidden.iter().enumerate() {
            if f.pattern.len() > self.ell {
                rep.errors.push(format!(
                    "forbidden pattern {i} has {} points, above ell = {}",
                    f.pattern.len(),
                    self.ell
                ));
            }
            if let Err(e) = self.check_pattern(&f.pattern) {
                rep.errors.push(format!("forbidden pattern {i}: {e}"));
            } else if self.realizable(&f.pattern) {
                rep.errors.push(format!(
                    "forbidden pattern {i} is reported realizable by the oracle"
                ));
            }
        }

        // relations
        for r in &self.relations {
            if r.arity > self.capability_bound() {
                rep.errors.push(format!(
                    "relation `{}` arity {} above the capability bound {}",
                    r.name,
                    r.arity,
                    self.capability_bound()
                ));
            }
            if r.slot_class.len() != r.arity {
                rep.errors.push(format!(
                    "relation `{}` identification partition has wrong length",
                    r.name
                ));
                continue;
            }
            let classes = r.classes();
            let mut seen = 0usize;
            let mut first_order_ok = true;
            for &c in &r.slot_class {
                if c > seen {
                    first_order_ok = false;
                }
                seen = seen.max(c + 1);
            }
            if !first_order_ok || seen != classes {
                rep.errors.push(format!(
                    "relation `{}` classes must be numbered by first occurrence",
                    r.name
                ));
            }
            for (j, p) in r.allowed.iter().enumerate() {
                if p.len() != classes {
                    rep.errors.push(format!(
                        "relation `{}` pattern {j} has {} points, expected {classes}",
                        r.name,
                        p.len()
                    ));
                    continue;
                }
                if let Err(e) = self.check_pattern(p) {
                    rep.errors.push(format!("relation `{}` pattern {j}: {e}", r.name));
                } else if !self.realizable(p) {
                    rep.errors.push(format!(
                        "relation `{}` pattern {j} is unrealizable",
                        r.name
                    ));
                }
            }
            let mut sorted = r.allowed.clone();
            sorted.sort();
            sorted.dedup();
            if sorted != r.allowed {
                rep.errors.push(format!(
                    "relation `{}` allowed set is not sorted and duplicate-free",
                    r.name
                ));
            }
        }

        if self.k > 2 {
            rep.notes.push(format!(
                "k = {} atlases validate but enumeration is limited to k <= 2",
                self.k
            ));
        }
        if self.ell >= 2 && !self.forbidden.iter().any(|f| f.pattern.len() == self.ell) {
            rep.notes.push(format!(
                "forbidden set empty at size {} (ell)",
                self.ell
            ));
        }
        rep
    }
}

/// Incremental construction of an atlas; `finish` validates.
pub struct AtlasBuilder {
    name: String,
    k: usize,
    ell: usize,
    labels: Vec<Vec<String>>,
    tables: BTreeMap<SlotMap, Vec<LabelId>>,
    forbidden: Vec<Forbidden>,
    relations: Vec<RelationDef>,
    width_params: (usize, usize),
    family: Family,
    auto_coherence: bool,
}

impl AtlasBuilder {
    pub fn new(name: &str, k: usize, ell: usize) -> Self {
        AtlasBuilder {
            name: name.to_string(),
            k,
            ell,
            labels: Vec::new(),
            tables: BTreeMap::new(),
            forbidden: Vec::new(),
            relations: Vec::new(),
            width_params: (2 * k, (3 * k).max(ell)),
            family: Family::Custom,
            auto_coherence: true,
        }
    }

    pub fn labels(mut self, names_per_arity: Vec<Vec<String>>) -> Self {
        self.labels = names_per_arity;
        self
    }

    pub fn family(mut self, family: Family) -> Self {
        self.family = family;
        self
    }

    pub fn width_params(mut self, params: (usize, usize)) -> Self {
        self.width_params = params;
        self
    }

    /// Disables the automatic diagonal-coherence forbidden triples.
    pub fn without_auto_coherence(mut self) -> Self {
        self.auto_coherence = false;
        self
    }

    /// Installs the four generator tables for a `k = 2` atlas; every other
    /// slot map table is derived from them.
    pub fn tables_k2(
        mut self,
        proj0: Vec<LabelId>,
        proj1: Vec<LabelId>,
        double: Vec<LabelId>,
        swap: Vec<LabelId>,
    ) -> Self {
        assert_eq!(self.k, 2, "tables_k2 applies to k = 2 atlases");
        let n1 = self.labels[0].len();
        let n2 = self.labels[1].len();
        assert_eq!(proj0.len(), n2);
        assert_eq!(proj1.len(), n2);
        assert_eq!(double.len(), n1);
        assert_eq!(swap.len(), n2);
        let id1: Vec<LabelId> = (0..n1 as LabelId).collect();
        let id2: Vec<LabelId> = (0..n2 as LabelId).collect();
        let dup0: Vec<LabelId> = proj0.iter().map(|&u| double[u as usize]).collect();
        let dup1: Vec<LabelId> = proj1.iter().map(|&u| double[u as usize]).collect();
        let t = &mut self.tables;
        t.insert(SlotMap::new(1, vec![0]), id1);
        t.insert(SlotMap::new(1, vec![0, 0]), double);
        t.insert(SlotMap::new(2, vec![0]), proj0);
        t.insert(SlotMap::new(2, vec![1]), proj1);
        t.insert(SlotMap::new(2, vec![0, 1]), id2);
        t.insert(SlotMap::new(2, vec![1, 0]), swap);
        t.insert(SlotMap::new(2, vec![0, 0]), dup0);
        t.insert(SlotMap::new(2, vec![1, 1]), dup1);
        self
    }

    pub fn forbid(mut self, pattern: Pattern, kind: ForbiddenKind) -> Self {
        self.forbidden.push(Forbidden { pattern, kind });
        self
    }

    pub fn relation(mut self, name: &str, slot_class: Vec<usize>, allowed: Vec<Pattern>) -> Self {
        let arity = slot_class.len();
        let mut allowed = allowed;
        allowed.sort();
        allowed.dedup();
        self.relations.push(RelationDef {
            name: name.to_string(),
            arity,
            slot_class,
            allowed,
        });
        self
    }

    /// Assembles the atlas, appends diagonal-coherence triples, canonicalizes
    /// the forbidden set, and validates.
    pub fn finish(self) -> Result<PatternAtlas, AtlasError> {
        let mut diagonal: Vec<LabelId> = if self.k >= 2 {
            let double = &self.tables[&SlotMap::new(1, vec![0, 0])];
            let mut d: Vec<LabelId> = double.clone();
            d.sort_unstable();
            d.dedup();
            d
        } else {
            Vec::new()
        };
        diagonal.dedup();

        let mut atlas = PatternAtlas {
            name: self.name,
            k: self.k,
            ell: self.ell,
            labels: self.labels,
            tables: self.tables,
            diagonal,
            forbidden: Vec::new(),
            relations: self.relations,
            width_params: self.width_params,
            family: self.family,
            enum_cache: Mutex::new(HashMap::new()),
            extension_cache: Mutex::new(HashMap::new()),
        };

        let mut forbidden = self.forbidden;
        if self.auto_coherence && atlas.k == 2 {
            forbidden.extend(diagonal_coherence_triples(&atlas));
        }
        // canonicalize and deduplicate
        let mut seen = BTreeSet::new();
        let mut cleaned = Vec::new();
        for f in forbidden {
            atlas.check_pattern(&f.pattern).map_err(|e| {
                AtlasError::Invalid(format!("forbidden pattern rejected: {e}"))
            })?;
            let canon = atlas.canonical(&f.pattern);
            if seen.insert((canon.clone(), f.kind)) {
                cleaned.push(Forbidden {
                    pattern: canon,
                    kind: f.kind,
                });
            }
        }
        cleaned.sort_by(|a, b| {
            (a.pattern.len(), &a.pattern, a.kind).cmp(&(b.pattern.len(), &b.pattern, b.kind))
        });
        atlas.forbidden = cleaned;

        let report = atlas.validate();
        if !report.is_valid() {
            return Err(AtlasError::Invalid(report.errors.join("; ")));
        }
        Ok(atlas)
    }
}

/// Patterns on three points where a diagonal pair label contradicts the
/// labels of the remaining pairs. These witness failures of the identification
/// calculus and are forbidden in every atlas.
fn diagonal_coherence_triples(atlas: &PatternAtlas) -> Vec<Forbidden> {
    let n1 = atlas.label_count(1) as LabelId;
    let n2 = atlas.label_count(2) as LabelId;
    let mut out = Vec::new();
    for u0 in 0..n1 {
        for u1 in 0..n1 {
            for u2 in 0..n1 {
                for l01 in 0..n2 {
                    if atlas.pair_coord(l01, 0) != u0 || atlas.pair_coord(l01, 1) != u1 {
                        continue;
                    }
                    for l02 in 0..n2 {
                        if atlas.pair_coord(l02, 0) != u0 || atlas.pair_coord(l02, 1) != u2 {
                            continue;
                        }
                        for l12 in 0..n2 {
                            if atlas.pair_coord(l12, 0) != u1 || atlas.pair_coord(l12, 1) != u2 {
                                continue;
                            }
                            let bad = (atlas.is_diagonal(l01) && l02 != l12)
                                || (atlas.is_diagonal(l02) && l01 != atlas.swap_pair(l12))
                                || (atlas.is_diagonal(l12) && l01 != l02);
                            if bad {
                                let p = Pattern::from_labels(
                                    3,
                                    vec![vec![u0, u1, u2], vec![l01, l02, l12]],
                                )
                                .expect("triple shape");
                                out.push(Forbidden {
                                    pattern: p,
                                    kind: ForbiddenKind::Substructure,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::builtin::*;
    use super::*;

    /// Independent oracle: all set partitions of `0..n` as class vectors
    /// (classes numbered by first occurrence).
    fn set_partitions(n: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = vec![0usize; n];
        fn rec(i: usize, n: usize, max_used: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if i == n {
                out.push(cur.clone());
                return;
            }
            for c in 0..=max_used + 1 {
                cur[i] = c;
                rec(i + 1, n, max_used.max(c), cur, out);
            }
        }
        if n == 0 {
            return vec![vec![]];
        }
        cur[0] = 0;
        rec(1, n, 0, &mut cur, &mut out);
        out
    }

    /// Independent oracle: union-find consistency of an eq/neq typing.
    fn unionfind_consistent(n: usize, pairs: &[(usize, usize, bool)]) -> bool {
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(a, b, eq) in pairs {
            if eq {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
        for &(a, b, eq) in pairs {
            if !eq && find(&mut parent, a) == find(&mut parent, b) {
                return false;
            }
        }
        true
    }

    #[test]
    fn equality_enumeration_counts_are_bell_numbers() {
        let atlas = equality_atlas();
        assert_eq!(atlas.enumerate(2).unwrap().len(), 2); // {eq, neq}
        // independent oracle: set partitions of a 3-set
        assert_eq!(set_partitions(3).len(), 5);
        assert_eq!(atlas.enumerate(3).unwrap().len(), 5);
        assert_eq!(set_partitions(4).len(), 15);
        assert_eq!(atlas.enumerate(4).unwrap().len(), 15);
        assert_eq!(set_partitions(5).len(), 52);
        assert_eq!(atlas.enumerate(5).unwrap().len(), 52);
    }

    #[test]
    fn equality_realizability_matches_union_find() {
        let atlas = equality_atlas();
        for n in 2..=5 {
            for p in atlas.enumerate_raw(n) {
                let pairs: Vec<(usize, usize, bool)> = (0..n)
                    .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                    .map(|(i, j)| (i, j, p.pair(i, j) == 0))
                    .collect();
                assert_eq!(
                    atlas.realizable(&p),
                    unionfind_consistent(n, &pairs),
                    "n={n} pattern {p:?}"
                );
            }
        }
    }

    #[test]
    fn henson_injective_triangles() {
        let atlas = henson_atlas(3);
        let tris: Vec<Pattern> = atlas
            .enumerate(3)
            .unwrap()
            .iter()
            .filter(|p| (0..3).all(|i| (i + 1..3).all(|j| p.pair(i, j) != 0)))
            .cloned()
            .collect();
        // all edge/none typings except the full clique
        assert_eq!(tris.len(), 7);
    }

    #[test]
    fn henson_realizability_matches_clique_search() {
        let atlas = henson_atlas(3);
        for n in 2..=5 {
            for p in atlas.enumerate_raw(n) {
                // independent oracle: merge equal points by union-find, then
                // check typing consistency and search for an edge triangle
                let mut class = vec![usize::MAX; n];
                let mut next = 0;
                let mut coherent = true;
                for i in 0..n {
                    if class[i] == usize::MAX {
                        class[i] = next;
                        next += 1;
                        for j in i + 1..n {
                            if p.pair(i, j) == 0 {
                                if class[j] != usize::MAX {
                                    coherent = false;
                                }
                                class[j] = class[i];
                            }
                        }
                    }
                }
                let mut label = vec![vec![None; next]; next];
                if coherent {
                    'outer: for i in 0..n {
                        for j in i + 1..n {
                            let (a, b) = (class[i], class[j]);
                            let l = p.pair(i, j);
                            if a == b {
                                if l != 0 {
                                    coherent = false;
                                    break 'outer;
                                }
                                continue;
                            }
                            match label[a][b] {
                                None => {
                                    label[a][b] = Some(l);
                                    label[b][a] = Some(l);
                                }
                                Some(prev) if prev != l => {
                                    coherent = false;
                                    break 'outer;
                                }
                                _ => {}
                            }
                            if l == 0 {
                                coherent = false;
                                break 'outer;
                            }
                        }
                    }
                }
                let mut ok = coherent;
                if ok {
                    // clique search over classes
                    for a in 0..next {
                        for b in a + 1..next {
                            for c in b + 1..next {
                                if label[a][b] == Some(1)
                                    && label[b][c] == Some(1)
                                    && label[a][c] == Some(1)
                                {
                                    ok = false;
                                }
                            }
                        }
                    }
                }
                assert_eq!(atlas.realizable(&p), ok, "n={n} {p:?}");
            }
        }
    }

    #[test]
    fn random_graph_pattern_counts_match_the_partition_sum() {
        // independent oracle: a coherent pattern is a set partition of the
        // points with a plain graph on the classes, so the count is
        // sum over partitions into m classes of 2^C(m,2)
        fn stirling(n: usize, m: usize) -> u64 {
            if n == 0 && m == 0 {
                return 1;
            }
            if n == 0 || m == 0 {
                return 0;
            }
            m as u64 * stirling(n - 1, m) + stirling(n - 1, m - 1)
        }
        let expected = |n: usize| -> u64 {
            (1..=n)
                .map(|m| stirling(n, m) * (1u64 << (m * (m - 1) / 2)))
                .sum()
        };
        assert_eq!(expected(3), 15);
        let atlas = random_graph_atlas();
        for n in 2..=6 {
            assert_eq!(
                atlas.enumerate(n).unwrap().len() as u64,
                expected(n),
                "{n} points"
            );
        }
        // every complete typing on six points is realizable: spot-check the
        // all-edge and alternating typings
        let all_edge = Pattern::from_labels(6, vec![vec![0; 6], vec![1; 15]]).unwrap();
        assert!(atlas.realizable(&all_edge));
    }

    #[test]
    fn restrictions_of_realizable_patterns_stay_realizable() {
        for atlas in [equality_atlas(), henson_atlas(3), random_graph_atlas()] {
            let upto = atlas.ell() + 1;
            for n in 1..=upto {
                for p in atlas.enumerate(n).unwrap().iter() {
                    for m in 1..=n {
                        for s in crate::combi::subsets(n, m) {
                            assert!(
                                atlas.realizable(&p.restrict(&s)),
                                "{}: restriction {s:?} of {p:?}",
                                atlas.name()
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn enumeration_is_duplicate_free_and_permutation_closed() {
        for atlas in [equality_atlas(), equivalence_atlas(), henson_atlas(3)] {
            for n in 2..=4 {
                let all = atlas.enumerate(n).unwrap();
                let set: std::collections::BTreeSet<&Pattern> = all.iter().collect();
                assert_eq!(set.len(), all.len(), "{} duplicates at {n}", atlas.name());
                for p in all.iter() {
                    for perm in permutations(n) {
                        assert!(
                            set.contains(&atlas.permuted(p, &perm)),
                            "{}: permutation escapes the set",
                            atlas.name()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn validator_flags_broken_swap_table() {
        let mut atlas = equality_atlas();
        // swap . swap must be the identity; break it
        atlas
            .tables
            .insert(SlotMap::new(2, vec![1, 0]), vec![1, 0]);
        let report = atlas.validate();
        assert!(!report.is_valid());
        assert!(report
            .errors
            .iter()
            .any(|e| e.contains("functoriality") || e.contains("projects")));
    }

    #[test]
    fn validator_notes_missing_boundary_size() {
        let mut atlas = henson_atlas(3);
        atlas.forbidden.retain(|f| f.pattern.len() < 3);
        let report = atlas.validate();
        assert!(report.is_valid());
        assert!(report.notes.iter().any(|n| n.contains("size 3")));
    }

    #[test]
    fn extension_property_holds_for_builtins() {
        for atlas in [
            equality_atlas(),
            equivalence_atlas(),
            henson_atlas(3),
            random_graph_atlas(),
            partition_atlas(&[BlockKind::Singleton, BlockKind::Infinite]),
        ] {
            assert!(
                atlas.extension_property_upto(4).unwrap(),
                "{}",
                atlas.name()
            );
        }
    }

    #[test]
    fn collapse_requires_diagonal_pairs() {
        let atlas = equality_atlas();
        let eq_pair = Pattern::from_labels(2, vec![vec![0, 0], vec![0]]).unwrap();
        let collapsed = atlas.collapse(&eq_pair, &[0, 0], 1).unwrap();
        assert_eq!(collapsed.len(), 1);
        let neq_pair = Pattern::from_labels(2, vec![vec![0, 0], vec![1]]).unwrap();
        assert!(atlas.collapse(&neq_pair, &[0, 0], 1).is_none());
    }
}
