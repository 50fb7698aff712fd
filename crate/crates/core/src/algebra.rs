//! Finite relational structures, operation tables, and polymorphism searches.
//!
//! Searches run over an indicator problem: cells are argument tuples, the
//! identity system glues cells into classes, and every relation constrains
//! the columns of every tuple selection. Search order is fixed (classes by
//! least cell, values ascending), so the first table found is the canonical
//! certificate for a given input.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combi::for_each_tuple;
use crate::rng::SplitMix64;

/// Propagation callback shared by the search drivers.
type Revise<'a> = &'a dyn Fn(&mut Vec<u16>, &mut VecDeque<usize>, &mut Vec<bool>) -> bool;

/// Default bound on stored tuples or enumerated selections per search.
pub const DEFAULT_CAP: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum AlgebraError {
    #[error("state-space cap exceeded ({0} needed, {1} allowed)")]
    CapExceeded(usize, usize),
    #[error("domain of size {0} is beyond this search (max {1})")]
    DomainTooLarge(usize, usize),
    #[error("harness precondition failed: {0}")]
    MissingCertificate(String),
    #[error("structure file error: {0}")]
    Format(String),
    #[error("internal error: {0}")]
    Internal(String),
}

/// A finite relational structure with explicit tuple sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteStructure {
    pub domain: Vec<String>,
    pub relations: Vec<FiniteRelation>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteRelation {
    pub name: String,
    pub arity: usize,
    pub tuples: Vec<Vec<u8>>,
}

impl FiniteStructure {
    pub fn new(domain: Vec<String>, relations: Vec<(&str, usize, Vec<Vec<u8>>)>) -> Self {
        let relations = relations
            .into_iter()
            .map(|(name, arity, mut tuples)| {
                tuples.sort();
                tuples.dedup();
                for t in &tuples {
                    assert_eq!(t.len(), arity);
                    assert!(t.iter().all(|&v| (v as usize) < domain.len()));
                }
                FiniteRelation {
                    name: name.to_string(),
                    arity,
                    tuples,
                }
            })
            .collect();
        FiniteStructure { domain, relations }
    }

    pub fn size(&self) -> usize {
        self.domain.len()
    }

    /// The structure expanded by one singleton unary relation per element.
    pub fn with_singletons(&self) -> FiniteStructure {
        let mut out = self.clone();
        for (i, name) in self.domain.iter().enumerate() {
            let rel_name = format!("one_{name}");
            if out.relations.iter().any(|r| r.name == rel_name) {
                continue;
            }
            out.relations.push(FiniteRelation {
                name: rel_name,
                arity: 1,
                tuples: vec![vec![i as u8]],
            });
        }
        out
    }
}

/// A total operation on a finite domain. Totally symmetric operations are
/// stored compressed as a map from nonempty argument sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationTable {
    pub arity: usize,
    pub domain_size: usize,
    repr: TableRepr,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TableRepr {
    /// Row-major values indexed by the mixed-radix argument tuple.
    Dense { values: Vec<u8> },
    /// Values indexed by nonempty argument-set bitmask minus one.
    SetCompressed { values: Vec<u8> },
}

impl OperationTable {
    pub fn dense(arity: usize, domain_size: usize, values: Vec<u8>) -> Self {
        assert_eq!(values.len(), domain_size.pow(arity as u32));
        OperationTable {
            arity,
            domain_size,
            repr: TableRepr::Dense { values },
        }
    }

    pub fn set_compressed(arity: usize, domain_size: usize, values: Vec<u8>) -> Self {
        assert!(domain_size <= 8);
        assert_eq!(values.len(), (1 << domain_size) - 1);
        OperationTable {
            arity,
            domain_size,
            repr: TableRepr::SetCompressed { values },
        }
    }

    pub fn is_set_compressed(&self) -> bool {
        matches!(self.repr, TableRepr::SetCompressed { .. })
    }

    /// The same set function viewed at a different arity.
    pub fn at_arity(&self, arity: usize) -> OperationTable {
        match &self.repr {
            TableRepr::SetCompressed { values } => OperationTable {
                arity,
                domain_size: self.domain_size,
                repr: TableRepr::SetCompressed {
                    values: values.clone(),
                },
            },
            TableRepr::Dense { .. } => {
                assert_eq!(arity, self.arity, "dense tables have a fixed arity");
                self.clone()
            }
        }
    }

    pub fn eval(&self, args: &[u8]) -> u8 {
        debug_assert_eq!(args.len(), self.arity);
        match &self.repr {
            TableRepr::Dense { values } => {
                let mut idx = 0usize;
                for &a in args {
                    idx = idx * self.domain_size + a as usize;
                }
                values[idx]
            }
            TableRepr::SetCompressed { values } => {
                let mut mask = 0usize;
                for &a in args {
                    mask |= 1 << a;
                }
                values[mask - 1]
            }
        }
    }

    pub fn is_idempotent(&self) -> bool {
        (0..self.domain_size as u8).all(|x| self.eval(&vec![x; self.arity]) == x)
    }

    /// All placements of a single deviating argument agree.
    pub fn is_wnu(&self) -> bool {
        if self.arity < 2 {
            return false;
        }
        for x in 0..self.domain_size as u8 {
            for y in 0..self.domain_size as u8 {
                if x == y {
                    continue;
                }
                let mut args = vec![x; self.arity];
                args[0] = y;
                let first = self.eval(&args);
                for pos in 1..self.arity {
                    let mut args = vec![x; self.arity];
                    args[pos] = y;
                    if self.eval(&args) != first {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// The value depends only on the set of arguments.
    pub fn is_totally_symmetric(&self) -> bool {
        if self.is_set_compressed() {
            return true;
        }
        let d = self.domain_size;
        let mut by_mask: HashMap<usize, u8> = HashMap::new();
        let mut ok = true;
        for_each_tuple(d, self.arity, |args| {
            let args: Vec<u8> = args.iter().map(|&a| a as u8).collect();
            let mut mask = 0usize;
            for &a in &args {
                mask |= 1 << a;
            }
            let v = self.eval(&args);
            match by_mask.get(&mask) {
                Some(&prev) if prev != v => {
                    ok = false;
                    false
                }
                _ => {
                    by_mask.insert(mask, v);
                    true
                }
            }
        });
        ok
    }

    /// Exhaustive preservation check against one relation.
    pub fn preserves(&self, rel: &FiniteRelation) -> bool {
        if rel.tuples.is_empty() {
            return true;
        }
        let mut col = vec![0u8; self.arity];
        let mut image = vec![0u8; rel.arity];
        let mut ok = true;
        for_each_tuple(rel.tuples.len(), self.arity, |sel| {
            for (j, slot) in image.iter_mut().enumerate() {
                for (i, &s) in sel.iter().enumerate() {
                    col[i] = rel.tuples[s][j];
                }
                *slot = self.eval(&col);
            }
            if rel
                .tuples
                .binary_search_by(|t| t.as_slice().cmp(image.as_slice()))
                .is_err()
            {
                ok = false;
                return false;
            }
            true
        });
        ok
    }

    pub fn preserves_structure(&self, s: &FiniteStructure) -> bool {
        s.relations.iter().all(|r| self.preserves(r))
    }
}

/// Identity systems over a single operation symbol.
#[derive(Clone, Debug)]
pub enum PolymorphismSpec {
    Wnu,
    IdempotentWnu,
    TotallySymmetric,
    Custom(Vec<Identity>),
}

/// One linear identity: `f(lhs) = f(rhs)` or `f(lhs) = variable`.
/// Entries are variable indices.
#[derive(Clone, Debug)]
pub struct Identity {
    pub lhs: Vec<usize>,
    pub rhs: IdentityRhs,
}

#[derive(Clone, Debug)]
pub enum IdentityRhs {
    Term(Vec<usize>),
    Var(usize),
}

fn spec_identities(spec: &PolymorphismSpec, arity: usize) -> Vec<Identity> {
    match spec {
        PolymorphismSpec::Wnu | PolymorphismSpec::IdempotentWnu => {
            // variables: 0 = y, 1 = x
            let one_off = |pos: usize| -> Vec<usize> {
                (0..arity).map(|i| if i == pos { 0 } else { 1 }).collect()
            };
            let mut ids: Vec<Identity> = (1..arity)
                .map(|pos| Identity {
                    lhs: one_off(0),
                    rhs: IdentityRhs::Term(one_off(pos)),
                })
                .collect();
            if matches!(spec, PolymorphismSpec::IdempotentWnu) {
                ids.push(Identity {
                    lhs: vec![0; arity],
                    rhs: IdentityRhs::Var(0),
                });
            }
            ids
        }
        PolymorphismSpec::TotallySymmetric => {
            // generated by the adjacent transposition and the full rotation
            let base: Vec<usize> = (0..arity).collect();
            let mut swapped = base.clone();
            if arity >= 2 {
                swapped.swap(0, 1);
            }
            let rotated: Vec<usize> = (0..arity).map(|i| (i + 1) % arity).collect();
            vec![
                Identity {
                    lhs: base.clone(),
                    rhs: IdentityRhs::Term(swapped),
                },
                Identity {
                    lhs: base,
                    rhs: IdentityRhs::Term(rotated),
                },
            ]
        }
        PolymorphismSpec::Custom(ids) => ids.clone(),
    }
}

// ---------------------------------------------------------------------------
// the indicator problem

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins, keeping class numbering stable
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// One operation symbol of the joint search.
struct OpShape {
    arity: usize,
    offset: usize,
}

struct Indicator {
    d: usize,
    ops: Vec<OpShape>,
    total_cells: usize,
    uf: UnionFind,
    /// forced values per cell, later folded into classes
    forced: Vec<Option<u8>>,
}

impl Indicator {
    fn new(d: usize, arities: &[usize]) -> Self {
        let mut ops = Vec::new();
        let mut offset = 0;
        for &a in arities {
            ops.push(OpShape { arity: a, offset });
            offset += d.pow(a as u32);
        }
        Indicator {
            d,
            ops,
            total_cells: offset,
            uf: UnionFind::new(offset),
            forced: vec![None; offset],
        }
    }

    fn cell(&self, op: usize, args: &[usize]) -> usize {
        let mut idx = 0usize;
        for &a in args {
            idx = idx * self.d + a;
        }
        self.ops[op].offset + idx
    }

    fn apply_identity(&mut self, op: usize, id: &Identity) -> Result<(), ()> {
        let n_vars = 1 + id
            .lhs
            .iter()
            .chain(match &id.rhs {
                IdentityRhs::Term(t) => t.iter(),
                IdentityRhs::Var(v) => std::slice::from_ref(v).iter(),
            })
            .copied()
            .max()
            .unwrap_or(0);
        let mut failed = false;
        for_each_tuple(self.d, n_vars, |assign| {
            let lhs_args: Vec<usize> = id.lhs.iter().map(|&v| assign[v]).collect();
            let lhs_cell = self.cell(op, &lhs_args);
            match &id.rhs {
                IdentityRhs::Term(t) => {
                    let rhs_args: Vec<usize> = t.iter().map(|&v| assign[v]).collect();
                    let rhs_cell = self.cell(op, &rhs_args);
                    self.uf.union(lhs_cell, rhs_cell);
                }
                IdentityRhs::Var(v) => {
                    let val = assign[*v] as u8;
                    let root = self.uf.find(lhs_cell);
                    match self.forced[root] {
                        Some(prev) if prev != val => {
                            failed = true;
                            return false;
                        }
                        _ => self.forced[root] = Some(val),
                    }
                }
            }
            true
        });
        if failed {
            Err(())
        } else {
            Ok(())
        }
    }

    /// Ties `f(lhs) = g(rhs)` over all assignments; used for linked pairs.
    fn tie_across(&mut self, op_a: usize, lhs: &[usize], op_b: usize, rhs: &[usize]) {
        let n_vars = 1 + lhs.iter().chain(rhs.iter()).copied().max().unwrap_or(0);
        for_each_tuple(self.d, n_vars, |assign| {
            let a_args: Vec<usize> = lhs.iter().map(|&v| assign[v]).collect();
            let b_args: Vec<usize> = rhs.iter().map(|&v| assign[v]).collect();
            let (a, b) = (self.cell(op_a, &a_args), self.cell(op_b, &b_args));
            self.uf.union(a, b);
            true
        });
    }

    /// Resolves classes and solves the constraint problem.
    #[allow(clippy::needless_range_loop)]
    fn solve(
        mut self,
        relations: &[&FiniteRelation],
        cap: usize,
    ) -> Result<Option<Vec<Vec<u8>>>, AlgebraError> {
        // class ids in order of least member cell
        let mut class_of_root: HashMap<usize, u32> = HashMap::new();
        let mut class_of_cell = vec![0u32; self.total_cells];
        let mut n_classes = 0u32;
        for c in 0..self.total_cells {
            let root = self.uf.find(c);
            let id = *class_of_root.entry(root).or_insert_with(|| {
                let id = n_classes;
                n_classes += 1;
                id
            });
            class_of_cell[c] = id;
        }
        // fold forced values (stored at roots) into class domains
        let full: u16 = if self.d >= 16 {
            return Err(AlgebraError::DomainTooLarge(self.d, 15));
        } else {
            (1u16 << self.d) - 1
        };
        let mut domains: Vec<u16> = vec![full; n_classes as usize];
        for c in 0..self.total_cells {
            let root = self.uf.find(c);
            if let Some(v) = self.forced[root] {
                let cls = class_of_cell[c] as usize;
                domains[cls] &= 1 << v;
                if domains[cls] == 0 {
                    return Ok(None);
                }
            }
        }

        // constraints: for each relation and selection of argument tuples,
        // the image columns must land back in the relation. Class vectors are
        // packed into u64 keys; relation arities stay small enough for that.
        let class_bits = 64 - (n_classes.max(1) as u64).leading_zeros() as usize;
        let mut packed: HashMap<u64, Vec<u64>> = HashMap::new();
        for (ri, rel) in relations.iter().enumerate() {
            if rel.tuples.is_empty() {
                continue;
            }
            if class_bits * rel.arity > 64 {
                return Err(AlgebraError::Internal(format!(
                    "relation `{}` too wide to index ({} classes)",
                    rel.name, n_classes
                )));
            }
            let seen = packed.entry(ri as u64).or_default();
            let mut seen_set: std::collections::HashSet<u64> =
                std::collections::HashSet::new();
            for op in 0..self.ops.len() {
                let arity = self.ops[op].arity;
                let count = rel.tuples.len().checked_pow(arity as u32);
                match count {
                    Some(c) if c <= cap => {}
                    _ => {
                        return Err(AlgebraError::CapExceeded(
                            count.unwrap_or(usize::MAX),
                            cap,
                        ))
                    }
                }
                let mut col = vec![0usize; arity];
                for_each_tuple(rel.tuples.len(), arity, |sel| {
                    let mut key = 0u64;
                    for j in 0..rel.arity {
                        for (i, &s) in sel.iter().enumerate() {
                            col[i] = rel.tuples[s][j] as usize;
                        }
                        key = (key << class_bits)
                            | class_of_cell[self.cell(op, &col)] as u64;
                    }
                    if seen_set.insert(key) {
                        seen.push(key);
                    }
                    true
                });
            }
        }
        let mut constraints: Vec<(Vec<u32>, usize)> = Vec::new();
        let mut rels_sorted: Vec<u64> = packed.keys().copied().collect();
        rels_sorted.sort_unstable();
        for ri in rels_sorted {
            let rel = relations[ri as usize];
            let mut keys = packed.remove(&ri).unwrap();
            keys.sort_unstable();
            for key in keys {
                let mut classes = vec![0u32; rel.arity];
                let mut k = key;
                for j in (0..rel.arity).rev() {
                    classes[j] = (k & ((1 << class_bits) - 1)) as u32;
                    k >>= class_bits;
                }
                constraints.push((classes, ri as usize));
            }
        }
        // positions grouped by class, for alloc-free duplicate checks
        let groups: Vec<Vec<(u32, Vec<usize>)>> = constraints
            .iter()
            .map(|(classes, _)| {
                let mut g: Vec<(u32, Vec<usize>)> = Vec::new();
                for (pos, &cls) in classes.iter().enumerate() {
                    match g.iter_mut().find(|(c, _)| *c == cls) {
                        Some((_, positions)) => positions.push(pos),
                        None => g.push((cls, vec![pos])),
                    }
                }
                g
            })
            .collect();
        let mut watching: Vec<Vec<usize>> = vec![Vec::new(); n_classes as usize];
        for (ci, (classes, _)) in constraints.iter().enumerate() {
            for &c in classes {
                if watching[c as usize].last() != Some(&ci) {
                    watching[c as usize].push(ci);
                }
            }
        }

        // arc consistency; returns false on a wiped domain
        let revise = |domains: &mut Vec<u16>, queue: &mut VecDeque<usize>, in_queue: &mut Vec<bool>| -> bool {
            while let Some(ci) = queue.pop_front() {
                in_queue[ci] = false;
                let (classes, ri) = &constraints[ci];
                let rel = relations[*ri];
                let mut support: Vec<u16> = vec![0; classes.len()];
                'tuples: for t in &rel.tuples {
                    for (cls, positions) in &groups[ci] {
                        let v = t[positions[0]];
                        if domains[*cls as usize] & (1 << v) == 0 {
                            continue 'tuples;
                        }
                        if positions[1..].iter().any(|&p| t[p] != v) {
                            continue 'tuples;
                        }
                    }
                    for (pos, _) in classes.iter().enumerate() {
                        support[pos] |= 1 << t[pos];
                    }
                }
                for (pos, &cls) in classes.iter().enumerate() {
                    let new = domains[cls as usize] & support[pos];
                    if new == 0 {
                        return false;
                    }
                    if new != domains[cls as usize] {
                        domains[cls as usize] = new;
                        for &other in &watching[cls as usize] {
                            if !in_queue[other] {
                                queue.push_back(other);
                                in_queue[other] = true;
                            }
                        }
                    }
                }
            }
            true
        };

        // initial propagation
        let mut queue: VecDeque<usize> = (0..constraints.len()).collect();
        let mut in_queue = vec![true; constraints.len()];
        if !revise(&mut domains, &mut queue, &mut in_queue) {
            return Ok(None);
        }

        // backtracking over classes in order, values ascending
        fn backtrack(
            domains: &[u16],
            revise: Revise,
            watching: &[Vec<usize>],
            n_constraints: usize,
            d: usize,
        ) -> Option<Vec<u16>> {
            let pick = domains.iter().position(|&m| m.count_ones() > 1);
            let Some(cls) = pick else {
                return Some(domains.to_vec());
            };
            for v in 0..d as u16 {
                if domains[cls] & (1 << v) == 0 {
                    continue;
                }
                let mut next = domains.to_vec();
                next[cls] = 1 << v;
                let mut queue: VecDeque<usize> = watching[cls].iter().copied().collect();
                let mut in_queue = vec![false; n_constraints];
                for &ci in &queue {
                    in_queue[ci] = true;
                }
                if revise(&mut next, &mut queue, &mut in_queue) {
                    if let Some(sol) = backtrack(&next, revise, watching, n_constraints, d) {
                        return Some(sol);
                    }
                }
            }
            None
        }

        let solution = backtrack(&domains, &revise, &watching, constraints.len(), self.d);
        let Some(solution) = solution else {
            return Ok(None);
        };

        // read tables off the solved classes
        let mut tables = Vec::new();
        for op in &self.ops {
            let size = self.d.pow(op.arity as u32);
            let mut values = Vec::with_capacity(size);
            for idx in 0..size {
                let cls = class_of_cell[op.offset + idx] as usize;
                values.push(solution[cls].trailing_zeros() as u8);
            }
            tables.push(values);
        }
        Ok(Some(tables))
    }
}

/// Searches one operation table satisfying the identity system and preserving
/// every relation of `s`. Deterministic; the first table found is canonical.
/// Returned tables are re-verified exhaustively.
pub fn find_polymorphism(
    s: &FiniteStructure,
    spec: &PolymorphismSpec,
    arity: usize,
) -> Result<Option<OperationTable>, AlgebraError> {
    find_polymorphism_capped(s, spec, arity, DEFAULT_CAP)
}

pub fn find_polymorphism_capped(
    s: &FiniteStructure,
    spec: &PolymorphismSpec,
    arity: usize,
    cap: usize,
) -> Result<Option<OperationTable>, AlgebraError> {
    assert!(arity >= 2, "polymorphism searches start at arity 2");
    let d = s.size();
    let mut ind = Indicator::new(d, &[arity]);
    for id in spec_identities(spec, arity) {
        if ind.apply_identity(0, &id).is_err() {
            return Ok(None);
        }
    }
    let rels: Vec<&FiniteRelation> = s.relations.iter().collect();
    let Some(tables) = ind.solve(&rels, cap)? else {
        return Ok(None);
    };
    let table = OperationTable::dense(arity, d, tables.into_iter().next().unwrap());
    verify_spec(&table, spec, s)?;
    Ok(Some(table))
}

fn verify_spec(
    table: &OperationTable,
    spec: &PolymorphismSpec,
    s: &FiniteStructure,
) -> Result<(), AlgebraError> {
    let ok = match spec {
        PolymorphismSpec::Wnu => table.is_wnu(),
        PolymorphismSpec::IdempotentWnu => table.is_wnu() && table.is_idempotent(),
        PolymorphismSpec::TotallySymmetric => table.is_totally_symmetric(),
        PolymorphismSpec::Custom(ids) => ids.iter().all(|id| {
            let n_vars = 1 + id
                .lhs
                .iter()
                .chain(match &id.rhs {
                    IdentityRhs::Term(t) => t.iter(),
                    IdentityRhs::Var(v) => std::slice::from_ref(v).iter(),
                })
                .copied()
                .max()
                .unwrap_or(0);
            let mut holds = true;
            for_each_tuple(table.domain_size, n_vars, |assign| {
                let lhs: Vec<u8> = id.lhs.iter().map(|&v| assign[v] as u8).collect();
                let lv = table.eval(&lhs);
                let rv = match &id.rhs {
                    IdentityRhs::Term(t) => {
                        let rhs: Vec<u8> = t.iter().map(|&v| assign[v] as u8).collect();
                        table.eval(&rhs)
                    }
                    IdentityRhs::Var(v) => assign[*v] as u8,
                };
                if lv != rv {
                    holds = false;
                    return false;
                }
                true
            });
            holds
        }),
    };
    if !ok {
        return Err(AlgebraError::Internal(
            "search returned a table violating its identities".into(),
        ));
    }
    if !table.preserves_structure(s) {
        return Err(AlgebraError::Internal(
            "search returned a non-polymorphism".into(),
        ));
    }
    Ok(())
}

/// A bounded-width certificate for a finite structure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WidthCertificate {
    /// Linked pair: a ternary and a quaternary weak near-unanimity operation
    /// agreeing on their one-deviation values.
    WnuPair {
        w3: OperationTable,
        w4: OperationTable,
    },
    /// Set function witnessing totally symmetric polymorphisms of all
    /// arities.
    TotallySymmetric { set_fn: OperationTable },
}

impl WidthCertificate {
    /// Certificate operations at the stated arities, for preservation checks.
    pub fn operations(&self) -> Vec<OperationTable> {
        match self {
            WidthCertificate::WnuPair { w3, w4 } => vec![w3.clone(), w4.clone()],
            WidthCertificate::TotallySymmetric { set_fn } => {
                vec![set_fn.at_arity(3), set_fn.at_arity(4)]
            }
        }
    }
}

/// Searches a linked pair of weak near-unanimity operations: `w3` ternary,
/// `w4` quaternary, idempotent, with `w3(y,x,x) = w4(y,x,x,x)`.
///
/// The input should be a core expanded by all singleton unary relations; the
/// found pair is the standard bounded-width certificate.
pub fn find_linked_wnu_pair(
    s: &FiniteStructure,
) -> Result<Option<(OperationTable, OperationTable)>, AlgebraError> {
    find_linked_wnu_pair_capped(s, DEFAULT_CAP)
}

pub fn find_linked_wnu_pair_capped(
    s: &FiniteStructure,
    cap: usize,
) -> Result<Option<(OperationTable, OperationTable)>, AlgebraError> {
    let d = s.size();
    let mut ind = Indicator::new(d, &[3, 4]);
    for (op, arity) in [(0usize, 3usize), (1, 4)] {
        for id in spec_identities(&PolymorphismSpec::IdempotentWnu, arity) {
            if ind.apply_identity(op, &id).is_err() {
                return Ok(None);
            }
        }
    }
    // w3(y,x,x) = w4(y,x,x,x)
    ind.tie_across(0, &[0, 1, 1], 1, &[0, 1, 1, 1]);
    let rels: Vec<&FiniteRelation> = s.relations.iter().collect();
    let Some(tables) = ind.solve(&rels, cap)? else {
        return Ok(None);
    };
    let mut it = tables.into_iter();
    let w3 = OperationTable::dense(3, d, it.next().unwrap());
    let w4 = OperationTable::dense(4, d, it.next().unwrap());
    verify_spec(&w3, &PolymorphismSpec::IdempotentWnu, s)?;
    verify_spec(&w4, &PolymorphismSpec::IdempotentWnu, s)?;
    for x in 0..d as u8 {
        for y in 0..d as u8 {
            if w3.eval(&[y, x, x]) != w4.eval(&[y, x, x, x]) {
                return Err(AlgebraError::Internal("linking identity violated".into()));
            }
        }
    }
    Ok(Some((w3, w4)))
}

/// Searches a totally symmetric polymorphism in compressed set-function form
/// at arity `|domain|`. Success certifies totally symmetric polymorphisms of
/// every arity by restriction of the set function.
pub fn has_ts_all_arities(
    s: &FiniteStructure,
) -> Result<Option<OperationTable>, AlgebraError> {
    has_ts_all_arities_capped(s, DEFAULT_CAP)
}

pub fn has_ts_all_arities_capped(
    s: &FiniteStructure,
    cap: usize,
) -> Result<Option<OperationTable>, AlgebraError> {
    let d = s.size();
    if d > 8 {
        return Err(AlgebraError::DomainTooLarge(d, 8));
    }
    let n_sets = (1usize << d) - 1;
    // domains per set variable
    let mut domains: Vec<u16> = vec![(1u16 << d) - 1; n_sets];
    // constraints: (set indices per position, relation)
    let mut constraints: Vec<(Vec<usize>, usize)> = Vec::new();
    for (ri, rel) in s.relations.iter().enumerate() {
        if rel.tuples.is_empty() {
            continue;
        }
        let combos = n_sets.checked_pow(rel.arity as u32);
        match combos {
            Some(c) if c <= cap => {}
            _ => return Err(AlgebraError::CapExceeded(combos.unwrap_or(usize::MAX), cap)),
        }
        for_each_tuple(n_sets, rel.arity, |sets| {
            // column sets of the tuples lying inside the boxes
            let masks: Vec<usize> = sets.iter().map(|&s| s + 1).collect();
            let mut cols = vec![0usize; rel.arity];
            for t in &rel.tuples {
                if t.iter()
                    .enumerate()
                    .all(|(j, &v)| masks[j] & (1 << v) != 0)
                {
                    for (j, &v) in t.iter().enumerate() {
                        cols[j] |= 1 << v;
                    }
                }
            }
            if cols == masks {
                constraints.push((sets.to_vec(), ri));
            }
            true
        });
    }
    let mut watching: Vec<Vec<usize>> = vec![Vec::new(); n_sets];
    for (ci, (sets, _)) in constraints.iter().enumerate() {
        for &sv in sets {
            if !watching[sv].contains(&ci) {
                watching[sv].push(ci);
            }
        }
    }

    let revise = |domains: &mut Vec<u16>, queue: &mut VecDeque<usize>, in_queue: &mut Vec<bool>| -> bool {
        while let Some(ci) = queue.pop_front() {
            in_queue[ci] = false;
            let (sets, ri) = &constraints[ci];
            let rel = &s.relations[*ri];
            let mut support = vec![0u16; sets.len()];
            'tuples: for t in &rel.tuples {
                let mut bound: HashMap<usize, u8> = HashMap::new();
                for (pos, &sv) in sets.iter().enumerate() {
                    let v = t[pos];
                    if domains[sv] & (1 << v) == 0 {
                        continue 'tuples;
                    }
                    match bound.get(&sv) {
                        Some(&prev) if prev != v => continue 'tuples,
                        _ => {
                            bound.insert(sv, v);
                        }
                    }
                }
                for (pos, _) in sets.iter().enumerate() {
                    support[pos] |= 1 << t[pos];
                }
            }
            for (pos, &sv) in sets.iter().enumerate() {
                let new = domains[sv] & support[pos];
                if new == 0 {
                    return false;
                }
                if new != domains[sv] {
                    domains[sv] = new;
                    for &other in &watching[sv] {
                        if !in_queue[other] {
                            queue.push_back(other);
                            in_queue[other] = true;
                        }
                    }
                }
            }
        }
        true
    };

    let mut queue: VecDeque<usize> = (0..constraints.len()).collect();
    let mut in_queue = vec![true; constraints.len()];
    if !revise(&mut domains, &mut queue, &mut in_queue) {
        return Ok(None);
    }

    fn backtrack(
        domains: &[u16],
        revise: Revise,
        watching: &[Vec<usize>],
        n_constraints: usize,
        d: usize,
    ) -> Option<Vec<u16>> {
        let pick = domains.iter().position(|&m| m.count_ones() > 1);
        let Some(sv) = pick else {
            return Some(domains.to_vec());
        };
        for v in 0..d as u16 {
            if domains[sv] & (1 << v) == 0 {
                continue;
            }
            let mut next = domains.to_vec();
            next[sv] = 1 << v;
            let mut queue: VecDeque<usize> = watching[sv].iter().copied().collect();
            let mut in_queue = vec![false; n_constraints];
            for &ci in &queue {
                in_queue[ci] = true;
            }
            if revise(&mut next, &mut queue, &mut in_queue) {
                if let Some(sol) = backtrack(&next, revise, watching, n_constraints, d) {
                    return Some(sol);
                }
            }
        }
        None
    }

    let Some(solution) = backtrack(&domains, &revise, &watching, constraints.len(), d) else {
        return Ok(None);
    };
    let values: Vec<u8> = solution
        .iter()
        .map(|m| m.trailing_zeros() as u8)
        .collect();
    let table = OperationTable::set_compressed(d, d, values);
    // verify: the table at arity d and at arity 3 preserve everything
    for arity in [2usize, 3, d.max(2)] {
        let t = table.at_arity(arity);
        if !t.preserves_structure(s) {
            return Err(AlgebraError::Internal(
                "set function fails preservation after the search".into(),
            ));
        }
    }
    Ok(Some(table))
}

/// Core of a finite structure: a retraction with minimal image, the induced
/// substructure on that image expanded by singletons, and the retraction map.
pub fn core_of(s: &FiniteStructure) -> Result<(FiniteStructure, Vec<u8>), AlgebraError> {
    let d = s.size();
    if d > 6 {
        return Err(AlgebraError::DomainTooLarge(d, 6));
    }
    let mut best: Option<Vec<u8>> = None;
    let mut best_image = usize::MAX;
    for_each_tuple(d, d, |map| {
        let map: Vec<u8> = map.iter().map(|&v| v as u8).collect();
        let endo = OperationTable::dense(1, d, map.clone());
        let _ = &endo;
        // preservation check for a unary map, done directly
        let preserves = s.relations.iter().all(|rel| {
            rel.tuples.iter().all(|t| {
                let image: Vec<u8> = t.iter().map(|&v| map[v as usize]).collect();
                rel.tuples.binary_search(&image).is_ok()
            })
        });
        if preserves {
            let mut img: Vec<u8> = map.clone();
            img.sort_unstable();
            img.dedup();
            if img.len() < best_image {
                best_image = img.len();
                best = Some(map);
            }
        }
        true
    });
    let mut retraction = best.expect("identity is always an endomorphism");
    // iterate to an idempotent power
    for _ in 0..4096 {
        let composed: Vec<u8> = (0..d).map(|x| retraction[retraction[x] as usize]).collect();
        if composed == retraction {
            break;
        }
        retraction = composed;
    }
    let mut image: Vec<u8> = retraction.clone();
    image.sort_unstable();
    image.dedup();
    let index_of = |v: u8| image.binary_search(&v).unwrap() as u8;
    let domain: Vec<String> = image.iter().map(|&v| s.domain[v as usize].clone()).collect();
    let relations: Vec<FiniteRelation> = s
        .relations
        .iter()
        .map(|rel| FiniteRelation {
            name: rel.name.clone(),
            arity: rel.arity,
            tuples: {
                let mut t: Vec<Vec<u8>> = rel
                    .tuples
                    .iter()
                    .filter(|t| t.iter().all(|&v| image.binary_search(&v).is_ok()))
                    .map(|t| t.iter().map(|&v| index_of(v)).collect())
                    .collect();
                t.sort();
                t.dedup();
                t
            },
        })
        .collect();
    let core = FiniteStructure { domain, relations }.with_singletons();
    Ok((core, retraction))
}

// ---------------------------------------------------------------------------
// cyclic relations and the loop harness

/// A relation closed under cyclic shifts of its tuples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CyclicRelation {
    pub arity: usize,
    pub domain_size: usize,
    tuples: Vec<Vec<u8>>,
}

impl CyclicRelation {
    /// Builds the shift closure of the given tuples.
    pub fn new(arity: usize, domain_size: usize, tuples: Vec<Vec<u8>>) -> Self {
        let mut set: BTreeSet<Vec<u8>> = BTreeSet::new();
        for t in tuples {
            assert_eq!(t.len(), arity);
            let mut rot = t;
            for _ in 0..arity {
                rot.rotate_left(1);
                set.insert(rot.clone());
            }
        }
        CyclicRelation {
            arity,
            domain_size,
            tuples: set.into_iter().collect(),
        }
    }

    pub fn tuples(&self) -> &[Vec<u8>] {
        &self.tuples
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Projection on any argument; well defined by shift closure.
    pub fn support(&self) -> Vec<u8> {
        let mut s: Vec<u8> = self.tuples.iter().map(|t| t[0]).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn is_shift_closed(&self) -> bool {
        self.tuples.iter().all(|t| {
            let mut rot = t.clone();
            rot.rotate_left(1);
            self.tuples.binary_search(&rot).is_ok()
        })
    }
}

/// Connected components of the prefix-to-last incidence: two support elements
/// are related when a chain of shared prefixes joins them. Returns the blocks
/// over the support, sorted.
pub fn linkedness_congruence(r: &CyclicRelation) -> Vec<Vec<u8>> {
    if r.is_empty() {
        return Vec::new();
    }
    let support = r.support();
    let pos = |v: u8| support.binary_search(&v).unwrap();
    let mut uf = UnionFind::new(support.len());
    let mut by_prefix: HashMap<&[u8], Vec<u8>> = HashMap::new();
    for t in &r.tuples {
        let (prefix, last) = t.split_at(r.arity - 1);
        by_prefix.entry(prefix).or_default().push(last[0]);
    }
    for lasts in by_prefix.values() {
        for w in lasts.windows(2) {
            uf.union(pos(w[0]), pos(w[1]));
        }
        if lasts.len() > 1 {
            uf.union(pos(lasts[0]), pos(*lasts.last().unwrap()));
        }
    }
    let mut blocks: HashMap<usize, Vec<u8>> = HashMap::new();
    for &v in &support {
        blocks.entry(uf.find(pos(v))).or_default().push(v);
    }
    let mut out: Vec<Vec<u8>> = blocks.into_values().collect();
    for b in &mut out {
        b.sort_unstable();
    }
    out.sort();
    out
}

/// Non-empty and all support elements in one linkedness block.
pub fn is_linked(r: &CyclicRelation) -> bool {
    !r.is_empty() && linkedness_congruence(r).len() == 1
}

/// First constant tuple, scanning in tuple order.
pub fn find_loop(r: &CyclicRelation) -> Option<Vec<u8>> {
    r.tuples
        .iter()
        .find(|t| t.windows(2).all(|w| w[0] == w[1]))
        .cloned()
}

/// Least superset of the seed closed under cyclic shift and componentwise
/// application of every generator.
pub fn close_cyclic(
    seed: &[Vec<u8>],
    generators: &[OperationTable],
    domain_size: usize,
    arity: usize,
    cap: usize,
) -> Result<CyclicRelation, AlgebraError> {
    for g in generators {
        if !g.is_idempotent() {
            return Err(AlgebraError::MissingCertificate(
                "closure generators must be idempotent".into(),
            ));
        }
    }
    let mut set: BTreeSet<Vec<u8>> = BTreeSet::new();
    let mut frontier: Vec<Vec<u8>> = Vec::new();
    let push = |t: Vec<u8>, set: &mut BTreeSet<Vec<u8>>, frontier: &mut Vec<Vec<u8>>| {
        let mut rot = t;
        for _ in 0..rot.len() {
            rot.rotate_left(1);
            if set.insert(rot.clone()) {
                frontier.push(rot.clone());
            }
        }
    };
    for t in seed {
        assert_eq!(t.len(), arity);
        push(t.clone(), &mut set, &mut frontier);
    }
    while !frontier.is_empty() {
        if set.len() > cap {
            return Err(AlgebraError::CapExceeded(set.len(), cap));
        }
        frontier.clear();
        let current: Vec<Vec<u8>> = set.iter().cloned().collect();
        let before = set.len();
        for g in generators {
            let mut fresh: Vec<Vec<u8>> = Vec::new();
            for_each_tuple(current.len(), g.arity, |sel| {
                let image: Vec<u8> = (0..arity)
                    .map(|j| {
                        let col: Vec<u8> = sel.iter().map(|&s| current[s][j]).collect();
                        g.eval(&col)
                    })
                    .collect();
                if !set.contains(&image) {
                    fresh.push(image);
                }
                true
            });
            for t in fresh {
                push(t, &mut set, &mut frontier);
            }
        }
        if set.len() == before {
            break;
        }
    }
    Ok(CyclicRelation {
        arity,
        domain_size,
        tuples: set.into_iter().collect(),
    })
}

/// Outcome of one loop-harness run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct HarnessReport {
    pub trials: usize,
    pub linked: usize,
    pub loops_found: usize,
    pub skipped_cap: usize,
    pub counterexamples: Vec<HarnessCounterexample>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HarnessCounterexample {
    pub arity: usize,
    pub seed_tuples: Vec<Vec<u8>>,
}

/// Random closure trials checking that linked closures contain loops.
///
/// At least one generator must be an idempotent weak near-unanimity
/// operation, witnessing equational non-triviality of the generated clone; a
/// counterexample in the report is a bug in the closure or linkedness code.
pub fn loop_lemma_harness(
    domain_size: usize,
    generators: &[OperationTable],
    trials: usize,
    seed: u64,
    cap: usize,
) -> Result<HarnessReport, AlgebraError> {
    if !generators
        .iter()
        .any(|g| g.is_idempotent() && (g.is_wnu() || (g.arity == 2 && g.is_totally_symmetric())))
    {
        return Err(AlgebraError::MissingCertificate(
            "no idempotent weak near-unanimity generator supplied".into(),
        ));
    }
    for g in generators {
        if !g.is_idempotent() {
            return Err(AlgebraError::MissingCertificate(
                "closure generators must be idempotent".into(),
            ));
        }
    }
    let mut rng = SplitMix64::new(seed);
    let mut report = HarnessReport::default();
    for _ in 0..trials {
        report.trials += 1;
        let arity = 2 + rng.below(3) as usize; // 2..=4
        let n_seed = 1 + rng.below(3) as usize;
        let seed_tuples: Vec<Vec<u8>> = (0..n_seed)
            .map(|_| {
                (0..arity)
                    .map(|_| rng.below(domain_size as u64) as u8)
                    .collect()
            })
            .collect();
        let closed = match close_cyclic(&seed_tuples, generators, domain_size, arity, cap) {
            Ok(c) => c,
            Err(AlgebraError::CapExceeded(..)) => {
                report.skipped_cap += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if is_linked(&closed) {
            report.linked += 1;
            if find_loop(&closed).is_some() {
                report.loops_found += 1;
            } else {
                report.counterexamples.push(HarnessCounterexample {
                    arity,
                    seed_tuples,
                });
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// structure files

pub const STRUCTURE_FORMAT: &str = "relwidth.structure/v1";

#[derive(Serialize, Deserialize)]
pub struct StructureDoc {
    pub format: String,
    pub domain: Vec<String>,
    pub relations: Vec<RelationTuplesDoc>,
}

#[derive(Serialize, Deserialize)]
pub struct RelationTuplesDoc {
    pub name: String,
    pub arity: usize,
    pub tuples: Vec<Vec<u8>>,
}

pub fn structure_to_json(s: &FiniteStructure) -> String {
    let doc = StructureDoc {
        format: STRUCTURE_FORMAT.to_string(),
        domain: s.domain.clone(),
        relations: s
            .relations
            .iter()
            .map(|r| RelationTuplesDoc {
                name: r.name.clone(),
                arity: r.arity,
                tuples: r.tuples.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("structure serialization")
}

pub fn structure_from_json(text: &str) -> Result<FiniteStructure, AlgebraError> {
    let doc: StructureDoc =
        serde_json::from_str(text).map_err(|e| AlgebraError::Format(e.to_string()))?;
    if doc.format != STRUCTURE_FORMAT {
        return Err(AlgebraError::Format(format!(
            "unsupported structure format `{}`, expected `{STRUCTURE_FORMAT}`",
            doc.format
        )));
    }
    let d = doc.domain.len();
    for r in &doc.relations {
        for t in &r.tuples {
            if t.len() != r.arity || t.iter().any(|&v| (v as usize) >= d) {
                return Err(AlgebraError::Format(format!(
                    "relation `{}` has a malformed tuple",
                    r.name
                )));
            }
        }
    }
    Ok(FiniteStructure::new(
        doc.domain,
        doc.relations
            .iter()
            .map(|r| (r.name.as_str(), r.arity, r.tuples.clone()))
            .collect(),
    ))
}

/// Example structures used by the analysis suites and the harness.
pub mod fixtures {
    use super::FiniteStructure;

    /// Two-element domain with disequality.
    pub fn k2() -> FiniteStructure {
        FiniteStructure::new(
            vec!["0".into(), "1".into()],
            vec![("neq", 2, vec![vec![0, 1], vec![1, 0]])],
        )
    }

    /// Two-element affine structure: ternary sum-zero and sum-one relations.
    pub fn z2_linear() -> FiniteStructure {
        let parity = |p: u8| -> Vec<Vec<u8>> {
            let mut out = Vec::new();
            for x in 0..2u8 {
                for y in 0..2u8 {
                    for z in 0..2u8 {
                        if (x + y + z) % 2 == p {
                            out.push(vec![x, y, z]);
                        }
                    }
                }
            }
            out
        };
        FiniteStructure::new(
            vec!["0".into(), "1".into()],
            vec![("sum0", 3, parity(0)), ("sum1", 3, parity(1))],
        )
    }

    /// Three-element clique: disequality on a 3-element domain.
    pub fn k3() -> FiniteStructure {
        let mut tuples = Vec::new();
        for x in 0..3u8 {
            for y in 0..3u8 {
                if x != y {
                    tuples.push(vec![x, y]);
                }
            }
        }
        FiniteStructure::new(
            vec!["0".into(), "1".into(), "2".into()],
            vec![("neq", 2, tuples)],
        )
    }

    /// Two-element meet semilattice: the graph of the meet operation.
    pub fn semilattice() -> FiniteStructure {
        FiniteStructure::new(
            vec!["0".into(), "1".into()],
            vec![(
                "meet",
                3,
                vec![vec![0, 0, 0], vec![0, 1, 0], vec![1, 0, 0], vec![1, 1, 1]],
            )],
        )
    }

    /// One-element structure with the full unary relation.
    pub fn point() -> FiniteStructure {
        FiniteStructure::new(vec!["0".into()], vec![("all", 1, vec![vec![0]])])
    }

    pub fn by_name(name: &str) -> Option<FiniteStructure> {
        match name {
            "k2" => Some(k2()),
            "z2" | "z2-linear" => Some(z2_linear()),
            "k3" => Some(k3()),
            "semilattice" => Some(semilattice()),
            "point" => Some(point()),
            _ => None,
        }
    }
}


#[cfg(test)]
mod cap_tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn full_relation_structures_have_set_functions() {
        // every relation full: any constant-free set function works
        let full = FiniteStructure::new(
            vec!["0".into(), "1".into()],
            vec![(
                "all",
                2,
                vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]],
            )],
        );
        assert!(has_ts_all_arities(&full).unwrap().is_some());
    }

    #[test]
    fn closure_cap_is_an_explicit_error() {
        let maj = find_polymorphism(&k2().with_singletons(), &PolymorphismSpec::Wnu, 3)
            .unwrap()
            .unwrap();
        let all: Vec<Vec<u8>> = (0..8u8)
            .map(|i| vec![i & 1, (i >> 1) & 1, (i >> 2) & 1])
            .collect();
        assert!(matches!(
            close_cyclic(&all, &[maj], 2, 3, 4),
            Err(AlgebraError::CapExceeded(..))
        ));
    }

    #[test]
    fn harness_counts_cap_skips() {
        let maj = find_polymorphism(&k2().with_singletons(), &PolymorphismSpec::Wnu, 3)
            .unwrap()
            .unwrap();
        let report = loop_lemma_harness(2, &[maj], 100, 3, 3).unwrap();
        assert_eq!(report.trials, 100);
        assert!(report.skipped_cap > 0);
        assert!(report.counterexamples.is_empty());
    }

    #[test]
    fn search_cap_is_an_explicit_error() {
        let s = k3().with_singletons();
        assert!(matches!(
            find_polymorphism_capped(&s, &PolymorphismSpec::Wnu, 4, 10),
            Err(AlgebraError::CapExceeded(..))
        ));
    }
}
