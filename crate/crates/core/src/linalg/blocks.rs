//! Decoupled diagonal blocks of a square matrix.
//!
//! A matrix whose sparsity graph splits into several connected components is
//! block diagonal up to a symmetric permutation. The Sylvester, Lyapunov,
//! exponential and resolvent kernels all factor over these blocks, which is
//! what keeps the 1000-state benchmark cheap.

use super::Matrix;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Connected components of the (symmetrized) nonzero pattern of `a`.
///
/// Every component is sorted ascending and components are ordered by their
/// smallest index.
pub fn components(a: &Matrix) -> Vec<Vec<usize>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut parent: Vec<usize> = (0..n).collect();
    for j in 0..n {
        for i in 0..n {
            if i != j && a[(i, j)] != 0.0 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    let (lo, hi) = if ri < rj { (ri, rj) } else { (rj, ri) };
                    parent[hi] = lo;
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

/// Submatrix `a[rows, cols]`.
pub fn select(a: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Writes `block` into `a[rows, cols]`.
pub fn scatter(a: &mut Matrix, rows: &[usize], cols: &[usize], block: &Matrix) {
    for (j, &cj) in cols.iter().enumerate() {
        for (i, &ri) in rows.iter().enumerate() {
            a[(ri, cj)] = block[(i, j)];
        }
    }
}
