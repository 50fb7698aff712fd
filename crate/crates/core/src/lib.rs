//! Constraint solving over finitely presented homogeneous templates.
//!
//! The crate is organized around five building blocks:
//!
//! - [`atlas`]: pattern atlases, finite presentations of templates through
//!   orbit labels, subtype tables, and forbidden patterns, together with the
//!   builtin template families (equality, equivalence, Henson graphs, the
//!   random graph and its four-ary reduct, stabilized partitions).
//! - [`engine`]: the `(k, l)`-minimality fixpoint engine over pattern-set
//!   constraints and a backtracking solver for finite instances.
//! - [`reduction`]: the finite orbit instance of a pattern instance,
//!   minimality transfer, constructive solution lifting, and the end-to-end
//!   solve pipeline.
//! - [`algebra`]: finite relational structures and operation tables:
//!   polymorphism searches, bounded-width certificates, cores, linkedness
//!   congruences, and the loop harness for cyclic relations.
//! - [`mmsnp`]: colored obstruction sets, parsing, standard precoloration,
//!   the finite color structure, Datalog rewritability, and forbidden-pattern
//!   problem solving.
//!
//! [`acceptance`] wires the above into a reproducible verification table.
//!
//! The central flow: normalize an instance over an atlas, minimize, and
//! solve.
//!
//! ```
//! use std::sync::Arc;
//! use relwidth_core::atlas::builtin;
//! use relwidth_core::engine::{normalize, RawConstraint, RawInstance};
//! use relwidth_core::reduction::{solve, SolveMode, Verdict};
//!
//! let atlas = Arc::new(builtin::equality_atlas());
//! let raw = RawInstance {
//!     variables: vec!["x".into(), "y".into(), "z".into()],
//!     constraints: vec![
//!         RawConstraint::Apply { relation: "eq".into(), args: vec!["x".into(), "y".into()] },
//!         RawConstraint::Apply { relation: "neq".into(), args: vec!["y".into(), "z".into()] },
//!     ],
//! };
//! let (instance, _notes) = normalize(&atlas, &raw).unwrap();
//! let solved = solve(&instance, SolveMode::Ts, None).unwrap();
//! match solved.verdict {
//!     Verdict::Sat(witness) => {
//!         // x and y share a class, z sits apart
//!         assert_eq!(witness.class_of, vec![0, 0, 1]);
//!     }
//!     other => panic!("expected a solution, got {}", other.name()),
//! }
//! ```

pub mod acceptance;
pub mod algebra;
pub mod atlas;
pub mod combi;
pub mod engine;
pub mod mmsnp;
pub mod reduction;
pub mod rng;
