//! Colored obstruction sets and the forbidden-pattern problem.
//!
//! An obstruction set is a finite family of finite connected colored
//! structures, each vertex carrying exactly one color. The module parses the
//! text format, computes standard precolorations, compiles obstruction sets
//! into pattern atlases, builds the finite color structure whose polymorphism
//! searches decide Datalog rewritability, and solves the forbidden-pattern
//! problem through the generic pipeline.
//!
//! Normal form is asserted, never computed: verdict-producing entry points
//! refuse to run without the assertion flag, since verdicts on non-normal
//! inputs are undefined.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{self, AlgebraError, FiniteStructure, OperationTable};
use crate::atlas::{
    AtlasBuilder, AtlasError, Family, ForbiddenKind, LabelId, Pattern, PatternAtlas,
};
use crate::combi::{permutations, subsets};
use crate::engine::{self, EngineError, RawConstraint, RawInstance};
use crate::reduction::{self, ReductionError, SolveMode};

#[derive(Debug, Error)]
pub enum MmsnpError {
    #[error("parse error at {line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("member {index}: {msg}")]
    Member { index: usize, msg: String },
    #[error("obstruction set is already precolored")]
    AlreadyPrecolored,
    #[error("precoloration symbol `{0}` clashes with the signature")]
    NameClash(String),
    #[error("normal form not asserted: verdicts are undefined without it")]
    NormalFormNotAsserted,
    #[error("signature arity {0} unsupported: the pattern calculus handles arity <= 2")]
    UnsupportedArity(usize),
    #[error("atom with a repeated vertex is unsupported: {0}")]
    RepeatedVertex(String),
    #[error("input structure: {0}")]
    Input(String),
    #[error(transparent)]
    Atlas(#[from] AtlasError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("internal error: {0}")]
    Internal(String),
}

/// A relation symbol of the input signature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelSym {
    pub name: String,
    pub arity: usize,
}

/// A finite colored structure: one color per vertex plus signature atoms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColoredStructure {
    pub size: usize,
    pub color: Vec<usize>,
    /// `(signature index, argument vertices)`, sorted and duplicate-free.
    pub atoms: Vec<(usize, Vec<usize>)>,
}

impl ColoredStructure {
    fn connected(&self) -> bool {
        if self.size <= 1 {
            return true;
        }
        let mut seen = vec![false; self.size];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for (_, args) in &self.atoms {
                if args.contains(&v) {
                    for &w in args {
                        if !seen[w] {
                            seen[w] = true;
                            stack.push(w);
                        }
                    }
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// A colored forbidden-pattern family.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObstructionSet {
    pub signature: Vec<RelSym>,
    pub colors: Vec<String>,
    pub members: Vec<ColoredStructure>,
    pub precolored: bool,
    pub normal_form_asserted: bool,
    /// When precolored, the signature index of the color-assertion predicate
    /// per color.
    pub color_pred: Vec<Option<usize>>,
}

impl ObstructionSet {
    pub fn assert_normal_form(mut self) -> Self {
        self.normal_form_asserted = true;
        self
    }

    /// Structural checks for hand-built sets; the parser enforces the same
    /// rules on the way in.
    pub fn validate(&self) -> Result<(), MmsnpError> {
        if self.colors.is_empty() {
            return Err(MmsnpError::Input("no colors declared".into()));
        }
        if self.color_pred.len() != self.colors.len() {
            return Err(MmsnpError::Input(
                "color predicate table does not match the colors".into(),
            ));
        }
        for (index, member) in self.members.iter().enumerate() {
            if member.size == 0 {
                return Err(MmsnpError::Member {
                    index,
                    msg: "member has no vertices".into(),
                });
            }
            if member.color.len() != member.size
                || member.color.iter().any(|&c| c >= self.colors.len())
            {
                return Err(MmsnpError::Member {
                    index,
                    msg: "vertex without exactly one valid color".into(),
                });
            }
            for (ri, args) in &member.atoms {
                let Some(rel) = self.signature.get(*ri) else {
                    return Err(MmsnpError::Member {
                        index,
                        msg: "atom over an undeclared symbol".into(),
                    });
                };
                if args.len() != rel.arity || args.iter().any(|&v| v >= member.size) {
                    return Err(MmsnpError::Member {
                        index,
                        msg: format!("malformed `{}` atom", rel.name),
                    });
                }
                let mut sorted = args.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != args.len() {
                    return Err(MmsnpError::RepeatedVertex(rel.name.clone()));
                }
            }
            if !member.connected() {
                return Err(MmsnpError::Member {
                    index,
                    msg: "member is disconnected".into(),
                });
            }
        }
        Ok(())
    }

    pub fn max_member_size(&self) -> usize {
        self.members.iter().map(|m| m.size).max().unwrap_or(0)
    }

    fn rel_index(&self, name: &str) -> Option<usize> {
        self.signature.iter().position(|r| r.name == name)
    }
}

// ---------------------------------------------------------------------------
// parsing

struct Tokenizer<'a> {
    text: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Punct(char),
    Eof,
}

impl<'a> Tokenizer<'a> {
    fn new(text: &'a str) -> Self {
        Tokenizer {
            text: text.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn err(&self, msg: impl Into<String>) -> MmsnpError {
        MmsnpError::Parse {
            line: self.line,
            col: self.col,
            msg: msg.into(),
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.text.get(self.pos).copied()?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn skip_ws(&mut self) {
        loop {
            match self.text.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'#') => {
                    while let Some(b) = self.bump() {
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => return,
            }
        }
    }

    fn next(&mut self) -> Result<Tok, MmsnpError> {
        self.skip_ws();
        let Some(&b) = self.text.get(self.pos) else {
            return Ok(Tok::Eof);
        };
        if b.is_ascii_alphanumeric() || b == b'_' {
            let mut s = String::new();
            while let Some(&b) = self.text.get(self.pos) {
                if b.is_ascii_alphanumeric() || b == b'_' {
                    s.push(b as char);
                    self.bump();
                } else {
                    break;
                }
            }
            return Ok(Tok::Ident(s));
        }
        if b"{}():,;/".contains(&b) {
            self.bump();
            return Ok(Tok::Punct(b as char));
        }
        Err(self.err(format!("unexpected character `{}`", b as char)))
    }


    fn expect_punct(&mut self, c: char) -> Result<(), MmsnpError> {
        match self.next()? {
            Tok::Punct(p) if p == c => Ok(()),
            other => Err(self.err(format!("expected `{c}`, found {other:?}"))),
        }
    }

    fn expect_ident(&mut self) -> Result<String, MmsnpError> {
        match self.next()? {
            Tok::Ident(s) => Ok(s),
            other => Err(self.err(format!("expected an identifier, found {other:?}"))),
        }
    }
}

/// Parses the obstruction-set text format:
///
/// ```text
/// # line comments start with '#'
/// colors R, B;
/// rel E/2;                # `edge E/2` is accepted as well
/// forbid {v, w : E(v,w), R(v), R(w)};
/// forbid {v, w : E(v,w), B(v), B(w)};
/// ```
///
/// Several members may follow one `forbid`, separated by commas. Every vertex
/// needs exactly one color atom; members must be connected; atoms with a
/// repeated vertex are rejected.
pub fn parse_obstruction_set(text: &str) -> Result<ObstructionSet, MmsnpError> {
    let mut tz = Tokenizer::new(text);
    let mut colors: Vec<String> = Vec::new();
    let mut signature: Vec<RelSym> = Vec::new();
    type RawAtoms = Vec<(String, Vec<String>)>;
    let mut raw_members: Vec<(usize, Vec<String>, RawAtoms)> = Vec::new();

    loop {
        match tz.next()? {
            Tok::Eof => break,
            Tok::Ident(kw) if kw == "colors" => loop {
                let name = tz.expect_ident()?;
                if colors.contains(&name) {
                    return Err(tz.err(format!("color `{name}` declared twice")));
                }
                colors.push(name);
                match tz.next()? {
                    Tok::Punct(',') => continue,
                    Tok::Punct(';') => break,
                    other => return Err(tz.err(format!("expected `,` or `;`, found {other:?}"))),
                }
            },
            Tok::Ident(kw) if kw == "rel" || kw == "edge" => {
                let name = tz.expect_ident()?;
                tz.expect_punct('/')?;
                let arity_tok = tz.expect_ident()?;
                let arity: usize = arity_tok
                    .parse()
                    .map_err(|_| tz.err(format!("bad arity `{arity_tok}`")))?;
                if arity == 0 {
                    return Err(tz.err("relation arity must be positive"));
                }
                if signature.iter().any(|r| r.name == name) {
                    return Err(tz.err(format!("relation `{name}` declared twice")));
                }
                signature.push(RelSym { name, arity });
                tz.expect_punct(';')?;
            }
            Tok::Ident(kw) if kw == "forbid" => loop {
                let member_line = tz.line;
                tz.expect_punct('{')?;
                let mut vars: Vec<String> = Vec::new();
                loop {
                    vars.push(tz.expect_ident()?);
                    match tz.next()? {
                        Tok::Punct(',') => continue,
                        Tok::Punct(':') => break,
                        other => {
                            return Err(tz.err(format!("expected `,` or `:`, found {other:?}")))
                        }
                    }
                }
                let mut atoms: Vec<(String, Vec<String>)> = Vec::new();
                loop {
                    let rel = tz.expect_ident()?;
                    tz.expect_punct('(')?;
                    let mut args = Vec::new();
                    loop {
                        args.push(tz.expect_ident()?);
                        match tz.next()? {
                            Tok::Punct(',') => continue,
                            Tok::Punct(')') => break,
                            other => {
                                return Err(
                                    tz.err(format!("expected `,` or `)`, found {other:?}"))
                                )
                            }
                        }
                    }
                    atoms.push((rel, args));
                    match tz.next()? {
                        Tok::Punct(',') => continue,
                        Tok::Punct('}') => break,
                        other => return Err(tz.err(format!("expected `,` or `}}`, found {other:?}"))),
                    }
                }
                raw_members.push((member_line, vars, atoms));
                match tz.next()? {
                    Tok::Punct(',') => continue,
                    Tok::Punct(';') => break,
                    other => return Err(tz.err(format!("expected `,` or `;`, found {other:?}"))),
                }
            },
            other => return Err(tz.err(format!("expected a declaration, found {other:?}"))),
        }
    }

    if colors.is_empty() {
        return Err(MmsnpError::Parse {
            line: 1,
            col: 1,
            msg: "no colors declared".into(),
        });
    }

    let mut members = Vec::new();
    for (index, (_, vars, atoms)) in raw_members.iter().enumerate() {
        let size = vars.len();
        let vertex = |name: &str| -> Result<usize, MmsnpError> {
            vars.iter().position(|v| v == name).ok_or(MmsnpError::Member {
                index,
                msg: format!("vertex `{name}` not declared in the member head"),
            })
        };
        let mut color: Vec<Option<usize>> = vec![None; size];
        let mut tau_atoms: Vec<(usize, Vec<usize>)> = Vec::new();
        for (rel, args) in atoms {
            if let Some(ci) = colors.iter().position(|c| c == rel) {
                if args.len() != 1 {
                    return Err(MmsnpError::Member {
                        index,
                        msg: format!("color `{rel}` used with {} arguments", args.len()),
                    });
                }
                let v = vertex(&args[0])?;
                if color[v].is_some() {
                    return Err(MmsnpError::Member {
                        index,
                        msg: format!("vertex `{}` carries more than one color", args[0]),
                    });
                }
                color[v] = Some(ci);
                continue;
            }
            let Some(ri) = signature.iter().position(|r| &r.name == rel) else {
                return Err(MmsnpError::Member {
                    index,
                    msg: format!("unknown symbol `{rel}`"),
                });
            };
            if args.len() != signature[ri].arity {
                return Err(MmsnpError::Member {
                    index,
                    msg: format!(
                        "`{rel}` expects {} arguments, found {}",
                        signature[ri].arity,
                        args.len()
                    ),
                });
            }
            let ids: Vec<usize> = args
                .iter()
                .map(|a| vertex(a))
                .collect::<Result<_, _>>()?;
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != ids.len() {
                return Err(MmsnpError::RepeatedVertex(format!(
                    "{rel}({})",
                    args.join(",")
                )));
            }
            tau_atoms.push((ri, ids));
        }
        let color: Vec<usize> = color
            .into_iter()
            .enumerate()
            .map(|(v, c)| {
                c.ok_or(MmsnpError::Member {
                    index,
                    msg: format!("vertex `{}` has no color", vars[v]),
                })
            })
            .collect::<Result<_, _>>()?;
        tau_atoms.sort();
        tau_atoms.dedup();
        let member = ColoredStructure {
            size,
            color,
            atoms: tau_atoms,
        };
        if !member.connected() {
            return Err(MmsnpError::Member {
                index,
                msg: "member is disconnected".into(),
            });
        }
        members.push(member);
    }

    Ok(ObstructionSet {
        color_pred: vec![None; colors.len()],
        signature,
        colors,
        members,
        precolored: false,
        normal_form_asserted: false,
    })
}

// ---------------------------------------------------------------------------
// precoloration

/// Standard precoloration: one unary assertion predicate per color, plus one
/// singleton obstruction per ordered pair of distinct colors.
pub fn precolor(set: &ObstructionSet) -> Result<ObstructionSet, MmsnpError> {
    set.validate()?;
    if set.precolored {
        return Err(MmsnpError::AlreadyPrecolored);
    }
    let mut out = set.clone();
    let mut color_pred = Vec::with_capacity(set.colors.len());
    for color in &set.colors {
        let pred = format!("P_{color}");
        if out.rel_index(&pred).is_some() {
            return Err(MmsnpError::NameClash(pred));
        }
        color_pred.push(Some(out.signature.len()));
        out.signature.push(RelSym {
            name: pred,
            arity: 1,
        });
    }
    for (mi, _) in set.colors.iter().enumerate() {
        for (ci, _) in set.colors.iter().enumerate() {
            if mi == ci {
                continue;
            }
            out.members.push(ColoredStructure {
                size: 1,
                color: vec![ci],
                atoms: vec![(color_pred[mi].unwrap(), vec![0])],
            });
        }
    }
    out.precolored = true;
    out.color_pred = color_pred;
    Ok(out)
}

// ---------------------------------------------------------------------------
// the obstruction atlas

/// Binary (non-diagonal) label payload: ordered colors plus directed atoms.
#[derive(Clone, Copy)]
struct PairMeta {
    c0: usize,
    c1: usize,
    /// Bit `2*r` for `rel_r(x, y)`, bit `2*r + 1` for `rel_r(y, x)`.
    mask: u32,
}

struct LabelLayout {
    n_colors: usize,
    binary_rels: Vec<usize>,
    pair_meta: Vec<Option<PairMeta>>, // None for the leading diagonal labels
}

impl LabelLayout {
    fn new(set: &ObstructionSet) -> Self {
        let binary_rels: Vec<usize> = set
            .signature
            .iter()
            .enumerate()
            .filter(|(_, r)| r.arity == 2)
            .map(|(i, _)| i)
            .collect();
        let n_colors = set.colors.len();
        let n_masks = 1usize << (2 * binary_rels.len());
        let mut pair_meta: Vec<Option<PairMeta>> = vec![None; n_colors];
        for c0 in 0..n_colors {
            for c1 in 0..n_colors {
                for mask in 0..n_masks {
                    pair_meta.push(Some(PairMeta {
                        c0,
                        c1,
                        mask: mask as u32,
                    }));
                }
            }
        }
        LabelLayout {
            n_colors,
            binary_rels,
            pair_meta,
        }
    }

    fn n_masks(&self) -> usize {
        1usize << (2 * self.binary_rels.len())
    }

    fn diag(&self, color: usize) -> LabelId {
        color as LabelId
    }

    fn pair(&self, c0: usize, c1: usize, mask: u32) -> LabelId {
        (self.n_colors + (c0 * self.n_colors + c1) * self.n_masks() + mask as usize) as LabelId
    }

    fn meta(&self, label: LabelId) -> Option<PairMeta> {
        self.pair_meta[label as usize]
    }

    fn names(&self, set: &ObstructionSet) -> Vec<String> {
        let mut out: Vec<String> = set.colors.iter().map(|c| format!("={c}")).collect();
        for c0 in 0..self.n_colors {
            for c1 in 0..self.n_colors {
                for mask in 0..self.n_masks() as u32 {
                    let mut atoms = Vec::new();
                    for (bi, &ri) in self.binary_rels.iter().enumerate() {
                        if mask & (1 << (2 * bi)) != 0 {
                            atoms.push(format!("{}01", set.signature[ri].name));
                        }
                        if mask & (1 << (2 * bi + 1)) != 0 {
                            atoms.push(format!("{}10", set.signature[ri].name));
                        }
                    }
                    let atoms = if atoms.is_empty() {
                        "-".to_string()
                    } else {
                        atoms.join("+")
                    };
                    out.push(format!(
                        "{}|{}|{atoms}",
                        set.colors[c0], set.colors[c1]
                    ));
                }
            }
        }
        out
    }
}

/// Does some member map homomorphically into the colored diagram a pattern
/// encodes? Color-assertion atoms read as color requirements.
fn member_maps_into(
    set: &ObstructionSet,
    layout: &LabelLayout,
    member: &ColoredStructure,
    p: &Pattern,
) -> bool {
    // required color per member vertex: its own color, and any color
    // assertions must agree with the target's color
    let mut assignment = vec![usize::MAX; member.size];
    fn rec(
        set: &ObstructionSet,
        layout: &LabelLayout,
        member: &ColoredStructure,
        p: &Pattern,
        v: usize,
        assignment: &mut [usize],
    ) -> bool {
        if v == member.size {
            return true;
        }
        'cand: for t in 0..p.len() {
            if p.unary(t) as usize != member.color[v] {
                continue;
            }
            for (ri, args) in &member.atoms {
                let rel = &set.signature[*ri];
                if rel.arity == 1 && args[0] == v {
                    // a color assertion: the target color must match
                    let asserted = set
                        .color_pred
                        .iter()
                        .position(|cp| *cp == Some(*ri));
                    if let Some(color) = asserted {
                        if p.unary(t) as usize != color {
                            continue 'cand;
                        }
                    } else {
                        // a unary signature symbol with no pattern-level
                        // footprint cannot be satisfied
                        continue 'cand;
                    }
                }
                if rel.arity == 2 {
                    let (a, b) = (args[0], args[1]);
                    let other = if a == v { b } else if b == v { a } else { continue };
                    if other > v || assignment[other] == usize::MAX {
                        continue;
                    }
                    let (u, w) = if a == v { (t, assignment[other]) } else { (assignment[other], t) };
                    if u == w {
                        continue 'cand; // would need a loop
                    }
                    let bi = layout
                        .binary_rels
                        .iter()
                        .position(|&r| r == *ri)
                        .expect("binary symbol indexed");
                    let (lo, hi) = (u.min(w), u.max(w));
                    let Some(meta) = layout.meta(p.pair(lo, hi)) else {
                        continue 'cand; // diagonal labels carry no atoms
                    };
                    let bit = if u == lo { 2 * bi } else { 2 * bi + 1 };
                    if meta.mask & (1 << bit) == 0 {
                        continue 'cand;
                    }
                }
            }
            assignment[v] = t;
            if rec(set, layout, member, p, v + 1, assignment) {
                return true;
            }
            assignment[v] = usize::MAX;
        }
        false
    }
    rec(set, layout, member, p, 0, &mut assignment)
}

/// Compiles a precolored, normal-form-asserted obstruction set into a pattern
/// atlas: unary labels are the colors, forbidden patterns are the minimal
/// complete types receiving a homomorphism from some member, and every
/// signature symbol becomes a relation.
pub fn obstruction_atlas(set: &ObstructionSet) -> Result<Arc<PatternAtlas>, MmsnpError> {
    if !set.precolored {
        return Err(MmsnpError::Internal(
            "obstruction atlas requires a precolored set".into(),
        ));
    }
    if !set.normal_form_asserted {
        return Err(MmsnpError::NormalFormNotAsserted);
    }
    set.validate()?;
    if let Some(r) = set.signature.iter().find(|r| r.arity > 2) {
        return Err(MmsnpError::UnsupportedArity(r.arity));
    }
    // unary symbols must be color assertions: anything else has no footprint
    // in the label calculus
    for (ri, r) in set.signature.iter().enumerate() {
        if r.arity == 1 && !set.color_pred.contains(&Some(ri)) {
            return Err(MmsnpError::Input(format!(
                "unary signature symbol `{}` is not a color assertion; \
                 only precoloration predicates are supported at arity one",
                r.name
            )));
        }
    }
    let layout = LabelLayout::new(set);
    let k = 2usize;
    let ell = (k + 1).max(set.max_member_size());
    let n_colors = set.colors.len();
    let n2 = layout.pair_meta.len();

    let mut proj0 = vec![0 as LabelId; n2];
    let mut proj1 = vec![0 as LabelId; n2];
    let mut swap = vec![0 as LabelId; n2];
    for l in 0..n2 as LabelId {
        match layout.meta(l) {
            None => {
                proj0[l as usize] = l;
                proj1[l as usize] = l;
                swap[l as usize] = l;
            }
            Some(m) => {
                proj0[l as usize] = layout.diag(m.c0);
                proj1[l as usize] = layout.diag(m.c1);
                let mut swapped = 0u32;
                for bi in 0..layout.binary_rels.len() {
                    if m.mask & (1 << (2 * bi)) != 0 {
                        swapped |= 1 << (2 * bi + 1);
                    }
                    if m.mask & (1 << (2 * bi + 1)) != 0 {
                        swapped |= 1 << (2 * bi);
                    }
                }
                swap[l as usize] = layout.pair(m.c1, m.c0, swapped);
            }
        }
    }
    let double: Vec<LabelId> = (0..n_colors as LabelId).collect();

    let base = |name: &str| -> AtlasBuilder {
        AtlasBuilder::new(name, k, ell)
            .labels(vec![set.colors.clone(), layout.names(set)])
            .tables_k2(proj0.clone(), proj1.clone(), double.clone(), swap.clone())
            .family(Family::Mmsnp {
                colors: set.colors.clone(),
            })
            .width_params((k, ell))
    };

    // stage one: labels only, for raw enumeration
    let stage1 = base("mmsnp").finish()?;

    // forbidden set: minimal bad complete types up to the member size bound
    let compile_limit = ell.min(set.max_member_size().max(1));
    let mut bad: Vec<Pattern> = Vec::new();
    for m in 1..=compile_limit {
        for q in stage1.enumerate_raw(m) {
            // skip diagonal-incoherent raw patterns; the builder's coherence
            // triples already exclude them
            if !diag_coherent(&stage1, &q) {
                continue;
            }
            // skip anything already covered by a smaller bad type
            if bad.iter().any(|b| stage1.embeds(b, &q, None)) {
                continue;
            }
            if set
                .members
                .iter()
                .any(|member| member_maps_into(set, &layout, member, &q))
            {
                bad.push(q);
            }
        }
    }

    let mut stage2 = base("mmsnp");
    for b in &bad {
        stage2 = stage2.forbid(b.clone(), ForbiddenKind::Substructure);
    }
    let stage2 = stage2.finish()?;

    // relations: one per signature symbol, read off the realizable patterns
    let unary_allowed = |ri: usize| -> Vec<Pattern> {
        match set.color_pred.iter().position(|cp| *cp == Some(ri)) {
            Some(color) => vec![Pattern::point(color as LabelId)],
            // unary symbols without color semantics never hold
            None => Vec::new(),
        }
    };
    let pairs = stage2.enumerate(2)?;
    let mut builder = base("mmsnp");
    for b in &bad {
        builder = builder.forbid(b.clone(), ForbiddenKind::Substructure);
    }
    for (ri, rel) in set.signature.iter().enumerate() {
        match rel.arity {
            1 => {
                builder = builder.relation(&rel.name, vec![0], unary_allowed(ri));
            }
            2 => {
                let bi = layout
                    .binary_rels
                    .iter()
                    .position(|&r| r == ri)
                    .expect("binary symbol indexed");
                let allowed: Vec<Pattern> = pairs
                    .iter()
                    .filter(|p| {
                        layout
                            .meta(p.pair(0, 1))
                            .is_some_and(|m| m.mask & (1 << (2 * bi)) != 0)
                    })
                    .cloned()
                    .collect();
                builder = builder.relation(&rel.name, vec![0, 1], allowed);
            }
            other => return Err(MmsnpError::UnsupportedArity(other)),
        }
    }
    Ok(Arc::new(builder.finish()?))
}

fn diag_coherent(atlas: &PatternAtlas, p: &Pattern) -> bool {
    let n = p.len();
    for x in 0..n {
        for y in x + 1..n {
            if !atlas.is_diagonal(p.pair(x, y)) {
                continue;
            }
            for z in 0..n {
                if z == x || z == y {
                    continue;
                }
                if atlas.derived_label(p, &[x, z]) != atlas.derived_label(p, &[y, z]) {
                    return false;
                }
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// the color structure

/// A signature-only shape: atoms over `size` abstract points.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Shape {
    size: usize,
    atoms: Vec<(usize, Vec<usize>)>,
}

impl Shape {
    fn canonical(&self) -> Shape {
        permutations(self.size)
            .iter()
            .map(|perm| {
                let mut atoms: Vec<(usize, Vec<usize>)> = self
                    .atoms
                    .iter()
                    .map(|(r, args)| (*r, args.iter().map(|&v| perm[v]).collect()))
                    .collect();
                atoms.sort();
                Shape {
                    size: self.size,
                    atoms,
                }
            })
            .min()
            .expect("identity permutation")
    }
}

/// Builds the finite structure on the colors: for every shape occurring as an
/// induced sub-skeleton of a member (plus every single-atom shape), the
/// relation of all color tuples whose colored shape receives no homomorphism
/// from any member. Color-assertion predicates contribute the singleton
/// unary relations.
pub fn color_structure(set: &ObstructionSet) -> Result<FiniteStructure, MmsnpError> {
    if !set.precolored {
        return Err(MmsnpError::Internal(
            "color structure requires a precolored set".into(),
        ));
    }
    if !set.normal_form_asserted {
        return Err(MmsnpError::NormalFormNotAsserted);
    }
    set.validate()?;
    let mut shapes: BTreeSet<Shape> = BTreeSet::new();
    for member in &set.members {
        for m in 1..=member.size {
            for s in subsets(member.size, m) {
                let atoms: Vec<(usize, Vec<usize>)> = member
                    .atoms
                    .iter()
                    .filter(|(_, args)| args.iter().all(|v| s.contains(v)))
                    .map(|(r, args)| {
                        (
                            *r,
                            args.iter()
                                .map(|v| s.iter().position(|x| x == v).unwrap())
                                .collect(),
                        )
                    })
                    .collect();
                shapes.insert(
                    Shape {
                        size: m,
                        atoms,
                    }
                    .canonical(),
                );
            }
        }
    }
    for (ri, rel) in set.signature.iter().enumerate() {
        shapes.insert(
            Shape {
                size: rel.arity,
                atoms: vec![(ri, (0..rel.arity).collect())],
            }
            .canonical(),
        );
    }

    let n_colors = set.colors.len();
    let mut relations = Vec::new();
    for (si, shape) in shapes.iter().enumerate() {
        let mut tuples: Vec<Vec<u8>> = Vec::new();
        let mut coloring = vec![0u8; shape.size];
        crate::combi::for_each_tuple(n_colors, shape.size, |c| {
            for (i, &v) in c.iter().enumerate() {
                coloring[i] = v as u8;
            }
            let excluded = set
                .members
                .iter()
                .any(|member| member_maps_into_shape(member, shape, &coloring));
            if !excluded {
                tuples.push(coloring.clone());
            }
            true
        });
        relations.push((format!("shape{si}"), shape.size, tuples));
    }
    Ok(FiniteStructure::new(
        set.colors.clone(),
        relations
            .iter()
            .map(|(n, a, t)| (n.as_str(), *a, t.clone()))
            .collect(),
    ))
}

/// Direct homomorphism search from a member into a colored shape.
fn member_maps_into_shape(member: &ColoredStructure, shape: &Shape, coloring: &[u8]) -> bool {
    fn rec(
        member: &ColoredStructure,
        shape: &Shape,
        coloring: &[u8],
        v: usize,
        assignment: &mut [usize],
    ) -> bool {
        if v == member.size {
            return true;
        }
        'cand: for t in 0..shape.size {
            if coloring[t] as usize != member.color[v] {
                continue;
            }
            for (ri, args) in &member.atoms {
                // check an atom once all its arguments are placed
                if !args.contains(&v) || args.iter().any(|&w| w > v) {
                    continue;
                }
                let image: Vec<usize> = args
                    .iter()
                    .map(|&w| if w == v { t } else { assignment[w] })
                    .collect();
                if !shape.atoms.contains(&(*ri, image)) {
                    continue 'cand;
                }
            }
            assignment[v] = t;
            if rec(member, shape, coloring, v + 1, assignment) {
                return true;
            }
            assignment[v] = usize::MAX;
        }
        false
    }
    let mut assignment = vec![usize::MAX; member.size];
    rec(member, shape, coloring, 0, &mut assignment)
}

// ---------------------------------------------------------------------------
// verdicts

/// The Datalog-rewritability verdict with its certificate or transcript.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RewritabilityVerdict {
    pub datalog: bool,
    /// Linked weak near-unanimity pair on the color structure; present
    /// exactly for positive verdicts.
    pub certificate: Option<(OperationTable, OperationTable)>,
    pub transcript: SearchTranscript,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchTranscript {
    pub colors: Vec<String>,
    pub relation_sizes: Vec<(String, usize)>,
    pub precolored_members: usize,
    pub exhausted: bool,
}

/// Decides whether the complement of the forbidden-pattern problem is
/// expressible in Datalog: positive exactly when the (precolored) color
/// structure carries a linked weak near-unanimity pair.
pub fn datalog_rewritable(set: &ObstructionSet) -> Result<RewritabilityVerdict, MmsnpError> {
    if !set.normal_form_asserted {
        return Err(MmsnpError::NormalFormNotAsserted);
    }
    let working = if set.precolored {
        set.clone()
    } else {
        precolor(set)?.assert_normal_form()
    };
    let cs = color_structure(&working)?;
    let (core, _) = algebra::core_of(&cs)?;
    let pair = algebra::find_linked_wnu_pair(&core)?;
    let transcript = SearchTranscript {
        colors: cs.domain.clone(),
        relation_sizes: cs
            .relations
            .iter()
            .map(|r| (r.name.clone(), r.tuples.len()))
            .collect(),
        precolored_members: working.members.len(),
        exhausted: pair.is_none(),
    };
    Ok(RewritabilityVerdict {
        datalog: pair.is_some(),
        certificate: pair,
        transcript,
    })
}

// ---------------------------------------------------------------------------
// the forbidden-pattern problem

/// An input structure over the signature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TauStructure {
    pub vertices: Vec<String>,
    pub atoms: Vec<(String, Vec<String>)>,
}

impl TauStructure {
    /// Cycle with symmetric edges `E`.
    pub fn cycle(n: usize) -> TauStructure {
        let vertices: Vec<String> = (0..n).map(|i| format!("u{i:02}")).collect();
        let mut atoms = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            atoms.push(("E".to_string(), vec![vertices[i].clone(), vertices[j].clone()]));
            atoms.push(("E".to_string(), vec![vertices[j].clone(), vertices[i].clone()]));
        }
        TauStructure { vertices, atoms }
    }

    /// Complete symmetric graph on `n` vertices.
    pub fn complete(n: usize) -> TauStructure {
        let vertices: Vec<String> = (0..n).map(|i| format!("u{i:02}")).collect();
        let mut atoms = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    atoms.push((
                        "E".to_string(),
                        vec![vertices[i].clone(), vertices[j].clone()],
                    ));
                }
            }
        }
        TauStructure { vertices, atoms }
    }
}

/// Which realization of the pipeline solves the instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FppRoute {
    /// Orbit instance at level one over the colors.
    #[default]
    ColorLevel,
    /// The generic level-two pipeline with witness lifting.
    OrbitLevel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FppOutcome {
    /// A coloring per input vertex, independently checked obstruction-free.
    Sat(Vec<(String, String)>),
    Unsat,
}

/// Solves the forbidden-pattern problem for an input structure.
///
/// The instance is built from the input's atoms over the obstruction atlas,
/// minimized at the totally-symmetric levels, and reduced. An exhausted
/// finite search is unsatisfiable: every source solution projects onto the
/// orbit instance, so emptiness there is conclusive.
pub fn fpp_solve(
    set: &ObstructionSet,
    input: &TauStructure,
    route: FppRoute,
) -> Result<FppOutcome, MmsnpError> {
    if !set.normal_form_asserted {
        return Err(MmsnpError::NormalFormNotAsserted);
    }
    let working = if set.precolored {
        set.clone()
    } else {
        precolor(set)?.assert_normal_form()
    };
    let atlas = obstruction_atlas(&working)?;

    // validate the input and build the instance
    let mut names = input.vertices.clone();
    names.sort();
    names.dedup();
    if names.len() != input.vertices.len() {
        return Err(MmsnpError::Input("duplicate vertex names".into()));
    }
    for (rel, args) in &input.atoms {
        let Some(ri) = working.rel_index(rel) else {
            return Err(MmsnpError::Input(format!("unknown symbol `{rel}`")));
        };
        if args.len() != working.signature[ri].arity {
            return Err(MmsnpError::Input(format!(
                "`{rel}` expects {} arguments",
                working.signature[ri].arity
            )));
        }
        let mut sorted = args.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != args.len() {
            return Err(MmsnpError::RepeatedVertex(format!(
                "{rel}({})",
                args.join(",")
            )));
        }
        for a in args {
            if !input.vertices.contains(a) {
                return Err(MmsnpError::Input(format!("undeclared vertex `{a}`")));
            }
        }
    }
    let raw = RawInstance {
        variables: input.vertices.clone(),
        constraints: input
            .atoms
            .iter()
            .map(|(rel, args)| RawConstraint::Apply {
                relation: rel.clone(),
                args: args.clone(),
            })
            .collect(),
    };
    let (instance, _) = engine::normalize(&atlas, &raw)?;

    let (mk, ml) = SolveMode::Ts.levels(&atlas);
    let minimized = engine::establish_minimality(&instance, mk, ml)?;
    if minimized.is_trivial() {
        return Ok(FppOutcome::Unsat);
    }

    let coloring: Vec<u16> = match route {
        FppRoute::ColorLevel => {
            let orbit = reduction::build_orbit_instance(&minimized, 1)?;
            match engine::search_solution(&orbit.finite) {
                None => return Ok(FppOutcome::Unsat),
                Some(h) => h,
            }
        }
        FppRoute::OrbitLevel => {
            if minimized.variables().len() < atlas.k() {
                let orbit = reduction::build_orbit_instance(&minimized, 1)?;
                match engine::search_solution(&orbit.finite) {
                    None => return Ok(FppOutcome::Unsat),
                    Some(h) => h,
                }
            } else {
                let orbit = reduction::build_orbit_instance(&minimized, atlas.k())?;
                match engine::search_solution(&orbit.finite) {
                    None => return Ok(FppOutcome::Unsat),
                    Some(h) => {
                        let witness = reduction::lift_solution(&minimized, &orbit, &h)?;
                        minimized
                            .variables()
                            .iter()
                            .enumerate()
                            .map(|(v, _)| witness.pattern.unary(witness.class_of[v]))
                            .collect()
                    }
                }
            }
        }
    };

    // independent obstruction-freeness check on the콜ored input
    let color_of = |name: &str| -> u16 {
        let idx = minimized
            .variables()
            .binary_search_by(|v| v.as_str().cmp(name))
            .expect("vertex is a variable");
        coloring[idx]
    };
    if let Some(member_idx) = obstruction_in_colored_input(&working, input, &color_of) {
        return Err(MmsnpError::Internal(format!(
            "member {member_idx} maps into the colored input despite minimality"
        )));
    }

    Ok(FppOutcome::Sat(
        input
            .vertices
            .iter()
            .map(|v| (v.clone(), working.colors[color_of(v) as usize].clone()))
            .collect(),
    ))
}

/// True when no member maps homomorphically into the colored input; the
/// direct check behind satisfiability certificates.
pub fn obstruction_free(
    set: &ObstructionSet,
    input: &TauStructure,
    color_of: &dyn Fn(&str) -> u16,
) -> bool {
    obstruction_in_colored_input(set, input, color_of).is_none()
}

/// Direct search for a member homomorphism into the colored input; returns
/// the first offending member index. Independent of the pattern machinery.
fn obstruction_in_colored_input(
    set: &ObstructionSet,
    input: &TauStructure,
    color_of: &dyn Fn(&str) -> u16,
) -> Option<usize> {
    let n = input.vertices.len();
    let vertex_color: Vec<u16> = input.vertices.iter().map(|v| color_of(v)).collect();
    let atom_set: BTreeSet<(usize, Vec<usize>)> = input
        .atoms
        .iter()
        .map(|(rel, args)| {
            (
                set.rel_index(rel).expect("validated symbol"),
                args.iter()
                    .map(|a| input.vertices.iter().position(|v| v == a).unwrap())
                    .collect(),
            )
        })
        .collect();
    for (mi, member) in set.members.iter().enumerate() {
        fn rec(
            set: &ObstructionSet,
            member: &ColoredStructure,
            n: usize,
            vertex_color: &[u16],
            atom_set: &BTreeSet<(usize, Vec<usize>)>,
            v: usize,
            assignment: &mut [usize],
        ) -> bool {
            if v == member.size {
                return true;
            }
            'cand: for t in 0..n {
                if vertex_color[t] as usize != member.color[v] {
                    continue;
                }
                for (ri, args) in &member.atoms {
                    if set.signature[*ri].arity == 1 {
                        if args[0] == v {
                            // color assertions match colors; other unary
                            // symbols must literally hold on the input
                            if let Some(color) =
                                set.color_pred.iter().position(|cp| *cp == Some(*ri))
                            {
                                if vertex_color[t] as usize != color {
                                    continue 'cand;
                                }
                            } else if !atom_set.contains(&(*ri, vec![t])) {
                                continue 'cand;
                            }
                        }
                        continue;
                    }
                    if !args.contains(&v) || args.iter().any(|&w| w != v && w > v) {
                        continue;
                    }
                    let image: Vec<usize> = args
                        .iter()
                        .map(|&w| if w == v { t } else { assignment[w] })
                        .collect();
                    if !atom_set.contains(&(*ri, image)) {
                        continue 'cand;
                    }
                }
                assignment[v] = t;
                if rec(set, member, n, vertex_color, atom_set, v + 1, assignment) {
                    return true;
                }
                assignment[v] = usize::MAX;
            }
            false
        }
        let mut assignment = vec![usize::MAX; member.size];
        if rec(
            set,
            member,
            n,
            &vertex_color,
            &atom_set,
            0,
            &mut assignment,
        ) {
            return Some(mi);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// fixture library and input files

/// Obstruction sets used across the test and verification suites.
pub mod library {
    use super::*;

    /// Proper coloring with `n` colors: one monochromatic edge per color.
    pub fn proper_coloring(n: usize) -> ObstructionSet {
        let names = ["R", "B", "G", "Y", "W"];
        assert!((1..=names.len()).contains(&n));
        let colors = names[..n].join(", ");
        let mut text = format!("colors {colors};\nrel E/2;\n");
        for c in &names[..n] {
            text.push_str(&format!("forbid {{v, w : E(v,w), {c}(v), {c}(w)}};\n"));
        }
        parse_obstruction_set(&text).expect("builtin coloring set")
    }

    /// One color, transitive triangle forbidden.
    pub fn triangle_free() -> ObstructionSet {
        parse_obstruction_set(
            "colors M;\nrel E/2;\nforbid {u, v, w : E(u,v), E(v,w), E(u,w), M(u), M(v), M(w)};\n",
        )
        .expect("builtin triangle-free set")
    }

    /// Two colors, monochromatic transitive triangle forbidden.
    pub fn mono_triangle() -> ObstructionSet {
        parse_obstruction_set(
            "colors R, B;\nrel E/2;\n\
             forbid {u, v, w : E(u,v), E(v,w), E(u,w), R(u), R(v), R(w)};\n\
             forbid {u, v, w : E(u,v), E(v,w), E(u,w), B(u), B(v), B(w)};\n",
        )
        .expect("builtin monochromatic-triangle set")
    }

    pub fn by_name(name: &str) -> Option<ObstructionSet> {
        match name {
            "2coloring" | "2col" => Some(proper_coloring(2)),
            "3coloring" | "3col" => Some(proper_coloring(3)),
            "triangle-free" => Some(triangle_free()),
            "mono-triangle" => Some(mono_triangle()),
            _ => None,
        }
    }
}

pub const TAU_FORMAT: &str = "relwidth.tau/v1";

#[derive(Serialize, Deserialize)]
pub struct TauDoc {
    pub format: String,
    pub vertices: Vec<String>,
    pub atoms: Vec<TauAtomDoc>,
}

#[derive(Serialize, Deserialize)]
pub struct TauAtomDoc {
    pub rel: String,
    pub args: Vec<String>,
}

pub fn tau_to_json(s: &TauStructure) -> String {
    let doc = TauDoc {
        format: TAU_FORMAT.to_string(),
        vertices: s.vertices.clone(),
        atoms: s
            .atoms
            .iter()
            .map(|(rel, args)| TauAtomDoc {
                rel: rel.clone(),
                args: args.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("structure serialization")
}

pub fn tau_from_json(text: &str) -> Result<TauStructure, MmsnpError> {
    let doc: TauDoc =
        serde_json::from_str(text).map_err(|e| MmsnpError::Input(e.to_string()))?;
    if doc.format != TAU_FORMAT {
        return Err(MmsnpError::Input(format!(
            "unsupported input format `{}`, expected `{TAU_FORMAT}`",
            doc.format
        )));
    }
    Ok(TauStructure {
        vertices: doc.vertices,
        atoms: doc.atoms.into_iter().map(|a| (a.rel, a.args)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::library::*;
    use super::*;

    #[test]
    fn parses_the_two_coloring_set() {
        let text = "colors R,B; edge E/2; forbid {v,w: E(v,w), R(v), R(w)}, {v,w: E(v,w), B(v), B(w)};";
        let set = parse_obstruction_set(text).unwrap();
        assert_eq!(set.colors, vec!["R", "B"]);
        assert_eq!(set.signature.len(), 1);
        assert_eq!(set.members.len(), 2);
        assert!(!set.precolored);
    }

    #[test]
    fn parser_reports_line_and_column() {
        let err = parse_obstruction_set("colors R;\nrel E/2;\nforbid {v w : E(v,w)};")
            .unwrap_err();
        match err {
            MmsnpError::Parse { line, col, .. } => {
                assert_eq!(line, 3);
                assert!(col > 1);
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn semantic_violations_name_the_member() {
        // uncolored vertex
        let err = parse_obstruction_set("colors R; rel E/2; forbid {v,w: E(v,w), R(v)};")
            .unwrap_err();
        assert!(matches!(err, MmsnpError::Member { index: 0, .. }), "{err:?}");
        // two colors on one vertex
        let err = parse_obstruction_set(
            "colors R,B; rel E/2; forbid {v,w: E(v,w), R(v), B(v), R(w)};",
        )
        .unwrap_err();
        assert!(matches!(err, MmsnpError::Member { index: 0, .. }));
        // disconnected member
        let err = parse_obstruction_set("colors R; rel E/2; forbid {v,w: R(v), R(w)};")
            .unwrap_err();
        assert!(matches!(err, MmsnpError::Member { index: 0, .. }));
        // loops are rejected outright
        let err =
            parse_obstruction_set("colors R; rel E/2; forbid {v: E(v,v), R(v)};").unwrap_err();
        assert!(matches!(err, MmsnpError::RepeatedVertex(_)));
    }

    #[test]
    fn precoloration_counts_and_guards() {
        let set = proper_coloring(2);
        let pre = precolor(&set).unwrap();
        // exactly |colors|^2 - |colors| singleton members added, nothing else
        assert_eq!(pre.members.len(), set.members.len() + 2);
        assert_eq!(pre.signature.len(), set.signature.len() + 2);
        assert_eq!(pre.colors, set.colors);
        assert_eq!(&pre.members[..set.members.len()], &set.members[..]);
        assert_eq!(&pre.signature[..set.signature.len()], &set.signature[..]);
        assert!(pre.members[set.members.len()..].iter().all(|m| m.size == 1));
        assert!(pre.precolored);
        assert!(matches!(precolor(&pre), Err(MmsnpError::AlreadyPrecolored)));
        // one color adds predicates but no mismatch members
        let one = precolor(&triangle_free()).unwrap();
        assert_eq!(one.members.len(), triangle_free().members.len());
        // name clash
        let clash = parse_obstruction_set("colors R; rel P_R/1; rel E/2; forbid {v,w: E(v,w), R(v), R(w)};").unwrap();
        assert!(matches!(precolor(&clash), Err(MmsnpError::NameClash(_))));
    }

    fn prepared(set: &ObstructionSet) -> ObstructionSet {
        precolor(set).unwrap().assert_normal_form()
    }

    #[test]
    fn color_structure_of_two_coloring_is_disequality() {
        let set = prepared(&proper_coloring(2));
        let cs = color_structure(&set).unwrap();
        assert_eq!(cs.domain, vec!["R", "B"]);
        // the edge shape carries exactly the bichromatic pairs
        let edge = cs
            .relations
            .iter()
            .find(|r| r.arity == 2 && r.tuples.len() == 2)
            .expect("edge-shape relation");
        assert_eq!(edge.tuples, vec![vec![0, 1], vec![1, 0]]);
        // singleton unary relations come from the color predicates
        for c in 0..2u8 {
            assert!(cs
                .relations
                .iter()
                .any(|r| r.arity == 1 && r.tuples == vec![vec![c]]));
        }
    }

    #[test]
    fn color_structure_of_triangle_freeness() {
        let set = prepared(&triangle_free());
        let cs = color_structure(&set).unwrap();
        assert_eq!(cs.domain.len(), 1);
        // triangle shape is empty, edge shape is full
        assert!(cs
            .relations
            .iter()
            .any(|r| r.arity == 3 && r.tuples.is_empty()));
        assert!(cs
            .relations
            .iter()
            .any(|r| r.arity == 2 && r.tuples == vec![vec![0, 0]]));
    }

    #[test]
    fn color_structure_of_three_coloring_is_a_clique() {
        let set = prepared(&proper_coloring(3));
        let cs = color_structure(&set).unwrap();
        let edge = cs
            .relations
            .iter()
            .find(|r| r.arity == 2 && r.tuples.len() == 6)
            .expect("edge-shape relation");
        for t in &edge.tuples {
            assert_ne!(t[0], t[1]);
        }
    }

    /// Independent oracle for color-structure membership: brute-force member
    /// homomorphism search reimplemented directly over atom lists.
    fn oracle_excluded(set: &ObstructionSet, shape: &Shape, coloring: &[u8]) -> bool {
        fn homs(
            member: &ColoredStructure,
            shape: &Shape,
            coloring: &[u8],
            assignment: &mut Vec<usize>,
        ) -> bool {
            if assignment.len() == member.size {
                // full re-check of every atom and color
                for (v, &t) in assignment.iter().enumerate() {
                    if coloring[t] as usize != member.color[v] {
                        return false;
                    }
                }
                for (ri, args) in &member.atoms {
                    let image: Vec<usize> = args.iter().map(|&w| assignment[w]).collect();
                    if !shape.atoms.contains(&(*ri, image)) {
                        return false;
                    }
                }
                return true;
            }
            for t in 0..shape.size {
                assignment.push(t);
                if homs(member, shape, coloring, assignment) {
                    return true;
                }
                assignment.pop();
            }
            false
        }
        set.members
            .iter()
            .any(|m| homs(m, shape, coloring, &mut Vec::new()))
    }

    #[test]
    fn color_structure_membership_agrees_with_the_oracle() {
        for set in [prepared(&proper_coloring(2)), prepared(&mono_triangle())] {
            let cs = color_structure(&set).unwrap();
            // rebuild the shapes the same way and compare tuple by tuple
            let mut shapes: BTreeSet<Shape> = BTreeSet::new();
            for member in &set.members {
                for m in 1..=member.size {
                    for s in subsets(member.size, m) {
                        let atoms: Vec<(usize, Vec<usize>)> = member
                            .atoms
                            .iter()
                            .filter(|(_, args)| args.iter().all(|v| s.contains(v)))
                            .map(|(r, args)| {
                                (
                                    *r,
                                    args.iter()
                                        .map(|v| s.iter().position(|x| x == v).unwrap())
                                        .collect(),
                                )
                            })
                            .collect();
                        shapes.insert(Shape { size: m, atoms }.canonical());
                    }
                }
            }
            for (ri, rel) in set.signature.iter().enumerate() {
                shapes.insert(
                    Shape {
                        size: rel.arity,
                        atoms: vec![(ri, (0..rel.arity).collect())],
                    }
                    .canonical(),
                );
            }
            for (si, shape) in shapes.iter().enumerate() {
                let rel = &cs.relations[si];
                let mut coloring = vec![0u8; shape.size];
                crate::combi::for_each_tuple(set.colors.len(), shape.size, |c| {
                    for (i, &v) in c.iter().enumerate() {
                        coloring[i] = v as u8;
                    }
                    let inside = rel.tuples.binary_search(&coloring.to_vec()).is_ok();
                    assert_eq!(
                        inside,
                        !oracle_excluded(&set, shape, &coloring),
                        "shape {si} coloring {coloring:?}"
                    );
                    true
                });
            }
        }
    }

    #[test]
    fn rewritability_verdicts() {
        let cases: [(&str, bool); 4] = [
            ("2coloring", true),
            ("3coloring", false),
            ("triangle-free", true),
            ("mono-triangle", false),
        ];
        for (name, expect) in cases {
            let set = by_name(name).unwrap().assert_normal_form();
            let verdict = datalog_rewritable(&set).unwrap();
            assert_eq!(verdict.datalog, expect, "{name}");
            assert_eq!(verdict.certificate.is_some(), expect, "{name}");
            assert_eq!(verdict.transcript.exhausted, !expect, "{name}");
        }
        // refusal without the normal-form assertion
        assert!(matches!(
            datalog_rewritable(&proper_coloring(2)),
            Err(MmsnpError::NormalFormNotAsserted)
        ));
    }

    #[test]
    fn verdicts_are_stable_under_precoloration() {
        for name in ["2coloring", "3coloring", "triangle-free", "mono-triangle"] {
            let raw = by_name(name).unwrap().assert_normal_form();
            let pre = precolor(&by_name(name).unwrap())
                .unwrap()
                .assert_normal_form();
            let a = datalog_rewritable(&raw).unwrap();
            let b = datalog_rewritable(&pre).unwrap();
            assert_eq!(a.datalog, b.datalog, "{name}");
        }
    }

    #[test]
    fn obstruction_atlas_validates_and_counts_labels() {
        let set = prepared(&proper_coloring(2));
        let atlas = obstruction_atlas(&set).unwrap();
        assert_eq!(atlas.k(), 2);
        assert_eq!(atlas.ell(), 3);
        assert_eq!(atlas.label_names(1), &["R", "B"]);
        assert!(atlas.validate().is_valid());
        // the monochromatic edge patterns are unrealizable
        let l = atlas.label_index(2, "R|R|E01").unwrap();
        let p = Pattern::from_labels(2, vec![vec![0, 0], vec![l]]).unwrap();
        assert!(!atlas.realizable(&p));
        let l = atlas.label_index(2, "R|B|E01").unwrap();
        let p = Pattern::from_labels(2, vec![vec![0, 1], vec![l]]).unwrap();
        assert!(atlas.realizable(&p));
    }

    #[test]
    fn atlas_realizability_matches_direct_member_search() {
        let set = prepared(&mono_triangle());
        let atlas = obstruction_atlas(&set).unwrap();
        let layout = LabelLayout::new(&set);
        for m in 1..=3 {
            for q in atlas.enumerate_raw(m) {
                if !diag_coherent(&atlas, &q) {
                    continue;
                }
                let direct = set
                    .members
                    .iter()
                    .any(|member| member_maps_into(&set, &layout, member, &q));
                assert_eq!(atlas.realizable(&q), !direct, "{q:?}");
            }
        }
    }

    #[test]
    fn fpp_on_triangle_freeness() {
        let set = triangle_free().assert_normal_form();
        for route in [FppRoute::ColorLevel, FppRoute::OrbitLevel] {
            let sat = fpp_solve(&set, &TauStructure::cycle(5), route).unwrap();
            assert!(matches!(sat, FppOutcome::Sat(_)), "{route:?}");
            let unsat = fpp_solve(&set, &TauStructure::complete(4), route).unwrap();
            assert_eq!(unsat, FppOutcome::Unsat, "{route:?}");
        }
    }

    #[test]
    fn fpp_on_two_coloring() {
        let set = proper_coloring(2).assert_normal_form();
        for route in [FppRoute::ColorLevel, FppRoute::OrbitLevel] {
            let even = fpp_solve(&set, &TauStructure::cycle(6), route).unwrap();
            match even {
                FppOutcome::Sat(coloring) => {
                    // adjacent vertices get different colors
                    let color: std::collections::HashMap<_, _> = coloring.into_iter().collect();
                    for i in 0..6 {
                        let a = format!("u{i:02}");
                        let b = format!("u{:02}", (i + 1) % 6);
                        assert_ne!(color[&a], color[&b]);
                    }
                }
                FppOutcome::Unsat => panic!("even cycles are two-colorable"),
            }
            let odd = fpp_solve(&set, &TauStructure::cycle(5), route).unwrap();
            assert_eq!(odd, FppOutcome::Unsat, "{route:?}");
        }
    }

    /// Brute-force oracle: enumerate all colorings of the input and test
    /// obstruction-freeness directly.
    fn brute_fpp(set: &ObstructionSet, input: &TauStructure) -> bool {
        let n = input.vertices.len();
        let mut sat = false;
        crate::combi::for_each_tuple(set.colors.len(), n, |c| {
            let coloring: Vec<u16> = c.iter().map(|&v| v as u16).collect();
            let names = input.vertices.clone();
            let color_of = |name: &str| -> u16 {
                coloring[names.iter().position(|v| v == name).unwrap()]
            };
            if obstruction_in_colored_input(set, input, &color_of).is_none() {
                sat = true;
                return false;
            }
            true
        });
        sat
    }

    #[test]
    fn fpp_agrees_with_brute_force_on_small_inputs() {
        let sets = [
            prepared(&proper_coloring(2)),
            prepared(&proper_coloring(3)),
            prepared(&triangle_free()),
            prepared(&mono_triangle()),
        ];
        let inputs = [
            TauStructure::cycle(4),
            TauStructure::cycle(5),
            TauStructure::complete(3),
            TauStructure::complete(4),
        ];
        for set in &sets {
            for input in &inputs {
                let expect = brute_fpp(set, input);
                for route in [FppRoute::ColorLevel, FppRoute::OrbitLevel] {
                    let got = fpp_solve(set, input, route).unwrap();
                    assert_eq!(
                        matches!(got, FppOutcome::Sat(_)),
                        expect,
                        "{:?} on {} vertices via {route:?}",
                        set.colors,
                        input.vertices.len()
                    );
                }
            }
        }
    }

    #[test]
    fn tau_files_roundtrip() {
        let s = TauStructure::cycle(5);
        let back = tau_from_json(&tau_to_json(&s)).unwrap();
        assert_eq!(s, back);
    }
}
