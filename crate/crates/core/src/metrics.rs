//! Clustering agreement: adjusted Rand index and misclassification rate.

use std::collections::HashMap;

use crate::error::{DgmmError, Result};

/// Co-occurrence counts of two labelings. Rows follow the first labeling,
/// columns the second, both in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    rows: Vec<u64>,
    cols: Vec<u64>,
    n: u64,
}

fn encode(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut seen = HashMap::new();
    let codes = labels
        .iter()
        .map(|l| {
            let next = seen.len();
            *seen.entry(*l).or_insert(next)
        })
        .collect();
    (codes, seen.len())
}

impl ContingencyTable {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(DgmmError::DimensionMismatch {
                expected: a.len(),
                found: b.len(),
            });
        }
        let (ca, ka) = encode(a);
        let (cb, kb) = encode(b);
        let mut counts = vec![vec![0u64; kb]; ka];
        for (&i, &j) in ca.iter().zip(&cb) {
            counts[i][j] += 1;
        }
        let rows = counts.iter().map(|r| r.iter().sum()).collect();
        let cols = (0..kb).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            counts,
            rows,
            cols,
            n: a.len() as u64,
        })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.rows
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.cols
    }

    pub fn n(&self) -> u64 {
        self.n
    }
}

/// Adjusted Rand index. Identical partitions, including the trivial
/// one-cluster case, score exactly 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DgmmError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(DgmmError::InvalidArgument(
            "the adjusted Rand index needs at least two observations".into(),
        ));
    }
    let t = ContingencyTable::new(a, b)?;
    // integer arithmetic scaled by 2 C(n, 2) so the only rounding is the
    // final division
    let pairs = |x: u64| (x as i128) * (x as i128 - 1) / 2;
    let index: i128 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let sa: i128 = t.rows.iter().map(|&c| pairs(c)).sum();
    let sb: i128 = t.cols.iter().map(|&c| pairs(c)).sum();
    let total = pairs(t.n);
    let num = 2 * (index * total - sa * sb);
    let denom = (sa + sb) * total - 2 * sa * sb;
    if denom == 0 {
        // Both sides are all-singletons or a single cluster.
        return Ok(1.0);
    }
    Ok(num as f64 / denom as f64)
}

/// Fraction of observations left unmatched by the best one-to-one mapping
/// between predicted and true clusters.
pub fn misclassification_rate(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(truth, pred)?;
    if t.n == 0 {
        return Err(DgmmError::Empty("labelings are empty".into()));
    }
    let size = t.rows.len().max(t.cols.len());
    let mut square = vec![vec![0u64; size]; size];
    for (i, row) in t.counts.iter().enumerate() {
        square[i][..row.len()].copy_from_slice(row);
    }
    let matched = if size <= 8 {
        best_by_permutation(&square)
    } else {
        best_by_assignment(&square)
    };
    Ok(1.0 - matched as f64 / t.n as f64)
}

fn best_by_permutation(w: &[Vec<u64>]) -> u64 {
    fn rec(w: &[Vec<u64>], row: usize, used: &mut [bool], acc: u64, best: &mut u64) {
        if row == w.len() {
            *best = (*best).max(acc);
            return;
        }
        for j in 0..w.len() {
            if !used[j] {
                used[j] = true;
                rec(w, row + 1, used, acc + w[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = 0;
    rec(w, 0, &mut vec![false; w.len()], 0, &mut best);
    best
}

fn best_by_assignment(w: &[Vec<u64>]) -> u64 {
    let weights = pathfinding::matrix::Matrix::from_rows(
        w.iter().map(|r| r.iter().map(|&c| c as i64).collect::<Vec<_>>()),
    )
    .expect("square table");
    let (total, _) = pathfinding::kuhn_munkres::kuhn_munkres(&weights);
    total as u64
}
