//! Small combinatorial helpers: binomials and lexicographic subset ranking.
//!
//! Subsets of `{0, .., n-1}` of a fixed size are ordered lexicographically on
//! their sorted element vectors; this order is the canonical layout for
//! per-subset data throughout the crate.

/// Binomial coefficient. Saturates are not needed at the sizes used here.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut num = 1usize;
    for i in 0..k {
        num = num * (n - i) / (i + 1);
    }
    num
}

/// All size-`m` subsets of `{0, .., n-1}` in lexicographic order.
pub fn subsets(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(binomial(n, m));
    if m > n {
        return out;
    }
    let mut cur: Vec<usize> = (0..m).collect();
    loop {
        out.push(cur.clone());
        // advance to the next combination
        let mut i = m;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] != i + n - m {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        cur[i] += 1;
        for j in i + 1..m {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Lexicographic rank of a sorted size-`m` subset of `{0, .., n-1}`.
pub fn subset_rank(subset: &[usize], n: usize) -> usize {
    let m = subset.len();
    let mut rank = 0;
    let mut prev = 0;
    for (i, &s) in subset.iter().enumerate() {
        for j in prev..s {
            rank += binomial(n - 1 - j, m - 1 - i);
        }
        prev = s + 1;
    }
    rank
}

/// Rank of the pair `(i, j)` with `i < j` among pairs over `{0, .., n-1}`.
pub fn pair_rank(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i < j && j < n);
    // pairs with first element < i, then offset within the i-block
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        // next_permutation
        if n < 2 {
            return out;
        }
        let mut i = n - 1;
        while i > 0 && cur[i - 1] >= cur[i] {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        let mut j = n - 1;
        while cur[j] <= cur[i - 1] {
            j -= 1;
        }
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
}

/// Cartesian power iteration: calls `f` on every length-`len` vector over
/// `0..base`. Returns early if `f` returns `false`.
pub fn for_each_tuple(base: usize, len: usize, mut f: impl FnMut(&[usize]) -> bool) {
    let mut cur = vec![0usize; len];
    if base == 0 && len > 0 {
        return;
    }
    loop {
        if !f(&cur) {
            return;
        }
        let mut i = len;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            cur[i] += 1;
            if cur[i] < base {
                break;
            }
            cur[i] = 0;
            if i == 0 {
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_agree_with_enumeration() {
        for n in 0..8 {
            for m in 0..=n {
                for (r, s) in subsets(n, m).iter().enumerate() {
                    assert_eq!(subset_rank(s, n), r, "n={n} m={m} s={s:?}");
                }
            }
        }
    }

    #[test]
    fn pair_rank_matches_subset_rank() {
        for n in 2..9 {
            for i in 0..n {
                for j in i + 1..n {
                    assert_eq!(pair_rank(i, j, n), subset_rank(&[i, j], n));
                }
            }
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(6, 2), 15);
        assert_eq!(binomial(10, 6), 210);
        assert_eq!(binomial(4, 5), 0);
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(4).len(), 24);
        assert_eq!(permutations(0).len(), 1);
    }
}
