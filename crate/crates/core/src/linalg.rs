//! Sparse symmetric matrices and an envelope (skyline) Cholesky solver.
//!
//! The FEM systems here are small enough (tens of thousands of unknowns)
//! that a profile factorization after reverse Cuthill–McKee reordering is
//! both fast and simple. One factorization is shared across all right-hand
//! sides.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, de-duplicated columns.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix by summing duplicate triplets.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// Principal submatrix on `keep` (given in the order of the new indices).
    pub fn submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_i, &old_i) in keep.iter().enumerate() {
            for (j, v) in self.row(old_i) {
                let new_j = map[j];
                if new_j != usize::MAX {
                    triplets.push((new_i, new_j, v));
                }
            }
        }
        CsrMatrix::from_triplets(keep.len(), triplets)
    }
}

/// Reverse Cuthill–McKee ordering of the symmetric sparsity graph.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n)
        .map(|i| a.row(i).filter(|&(j, _)| j != i).count())
        .collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    while order.len() < n {
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
            .unwrap();
        let root = pseudo_peripheral(a, start, &visited);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = a
                .row(v)
                .map(|(j, _)| j)
                .filter(|&j| j != v && !visited[j])
                .collect();
            nbrs.sort_by_key(|&j| (degree[j], j));
            for j in nbrs {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(a: &CsrMatrix, root: usize, blocked: &[bool]) -> (Vec<usize>, usize) {
    let mut level = vec![usize::MAX; a.dim()];
    level[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut last = root;
    while let Some(v) = queue.pop_front() {
        last = v;
        for (j, _) in a.row(v) {
            if !blocked[j] && level[j] == usize::MAX {
                level[j] = level[v] + 1;
                queue.push_back(j);
            }
        }
    }
    let depth = level[last];
    (level, depth)
}

fn pseudo_peripheral(a: &CsrMatrix, start: usize, blocked: &[bool]) -> usize {
    let mut root = start;
    let (mut level, mut depth) = bfs_levels(a, root, blocked);
    for _ in 0..8 {
        let candidate = (0..a.dim())
            .filter(|&i| level[i] == depth)
            .min_by_key(|&i| a.row(i).count())
            .unwrap_or(root);
        let (l2, d2) = bfs_levels(a, candidate, blocked);
        if d2 <= depth {
            break;
        }
        root = candidate;
        level = l2;
        depth = d2;
    }
    root
}

/// Envelope Cholesky factor `P A Pᵀ = L Lᵀ` of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    n: usize,
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(a);
        let mut inv_perm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }

        let mut first: Vec<usize> = (0..n).collect();
        for (new_i, &old_i) in perm.iter().enumerate() {
            for (old_j, _) in a.row(old_i) {
                let new_j = inv_perm[old_j];
                if new_j < first[new_i] {
                    first[new_i] = new_j;
                }
            }
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; start[n]];
        for (new_i, &old_i) in perm.iter().enumerate() {
            for (old_j, v) in a.row(old_i) {
                let new_j = inv_perm[old_j];
                if new_j <= new_i {
                    data[start[new_i] + new_j - first[new_i]] += v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let (row_j, row_i) = {
                    let (lo, hi) = data.split_at_mut(start[i]);
                    (
                        &lo[start[j]..start[j + 1]],
                        &mut hi[..start[i + 1] - start[i]],
                    )
                };
                let mut s = row_i[j - fi];
                for k in k0..j {
                    s -= row_i[k - fi] * row_j[k - fj];
                }
                row_i[j - fi] = s / row_j[j - fj];
            }
            let row_i = &mut data[start[i]..start[i + 1]];
            let mut d = row_i[i - fi];
            for k in fi..i {
                d -= row_i[k - fi] * row_i[k - fi];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Singular {
                    pivot: perm[i],
                    value: d,
                });
            }
            row_i[i - fi] = d.sqrt();
        }

        Ok(Self {
            n,
            perm,
            inv_perm,
            first,
            start,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        // forward: L y = b
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let mut s = y[i];
            for k in fi..i {
                s -= row[k - fi] * y[k];
            }
            y[i] = s / row[i - fi];
        }
        // backward: Lᵀ x = y (column sweep over stored rows)
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= row[k - fi] * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (old, &new) in self.inv_perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
