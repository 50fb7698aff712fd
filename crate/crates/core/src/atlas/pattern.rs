//! Atomic types over a finite point set.
//!
//! A pattern assigns an orbit label to every subset of its points of size up
//! to the atlas homogeneity arity `k`. Points are positional (`0..n`) and
//! canonically ordered; attaching points to externally named objects is the
//! caller's job. Labels for rearranged or repeated tuples are never stored,
//! they are derived through the atlas subtype tables.

use serde::{Deserialize, Serialize};

use crate::combi::{binomial, pair_rank, subset_rank, subsets};

/// Index of a label within its arity class of a [`super::PatternAtlas`].
pub type LabelId = u16;

/// A coherent assignment of orbit labels to the small subsets of a point set.
///
/// `labels[m-1][r]` is the label of the rank-`r` size-`m` subset (subsets in
/// lexicographic order), for `m = 1 ..= min(k, n)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pattern {
    n: usize,
    labels: Vec<Vec<LabelId>>,
}

impl Pattern {
    /// Builds a pattern from per-arity label vectors. Shape is checked,
    /// coherence against an atlas is not; see
    /// [`super::PatternAtlas::check_pattern`].
    pub fn from_labels(n: usize, labels: Vec<Vec<LabelId>>) -> Result<Self, String> {
        if n == 0 {
            return Err("pattern needs at least one point".into());
        }
        if labels.is_empty() {
            return Err("pattern needs at least unary labels".into());
        }
        for (i, row) in labels.iter().enumerate() {
            let want = binomial(n, i + 1);
            if row.len() != want {
                return Err(format!(
                    "arity-{} label row has {} entries, expected {}",
                    i + 1,
                    row.len(),
                    want
                ));
            }
        }
        Ok(Pattern { n, labels })
    }

    /// Single-point pattern.
    pub fn point(label: LabelId) -> Self {
        Pattern {
            n: 1,
            labels: vec![vec![label]],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest subset size carrying stored labels.
    pub fn max_arity(&self) -> usize {
        self.labels.len()
    }

    pub fn unary(&self, i: usize) -> LabelId {
        self.labels[0][i]
    }

    /// Label of the ascending pair `(i, j)`, `i < j`.
    pub fn pair(&self, i: usize, j: usize) -> LabelId {
        debug_assert!(i < j);
        self.labels[1][pair_rank(i, j, self.n)]
    }

    /// Label of a sorted subset given by rank within its size class.
    pub fn label_at(&self, arity: usize, rank: usize) -> LabelId {
        self.labels[arity - 1][rank]
    }

    /// Label of a sorted subset.
    pub fn subset_label(&self, subset: &[usize]) -> LabelId {
        self.labels[subset.len() - 1][subset_rank(subset, self.n)]
    }

    pub fn rows(&self) -> &[Vec<LabelId>] {
        &self.labels
    }

    /// Induced pattern on a nonempty sorted subset of points.
    pub fn restrict(&self, subset: &[usize]) -> Pattern {
        assert!(!subset.is_empty(), "restriction needs at least one point");
        debug_assert!(subset.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(subset.iter().all(|&p| p < self.n));
        let s = subset.len();
        let depth = self.labels.len().min(s);
        let mut labels = Vec::with_capacity(depth);
        for m in 1..=depth {
            let mut row = Vec::with_capacity(binomial(s, m));
            for local in subsets(s, m) {
                let global: Vec<usize> = local.iter().map(|&i| subset[i]).collect();
                row.push(self.subset_label(&global));
            }
            labels.push(row);
        }
        Pattern { n: s, labels }
    }

    /// Flat label vector, used as a compact set key.
    pub fn key(&self) -> Vec<LabelId> {
        self.labels.iter().flatten().copied().collect()
    }
}
