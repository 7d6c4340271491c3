//! Compressed sparse row matrices and a sparse Cholesky factorisation with a
//! nested-dissection fill-reducing ordering.
//!
//! The factorisation is the classic up-looking algorithm driven by the
//! elimination tree. Symbolic analysis (ordering, elimination tree, column
//! counts) is separated from the numeric phase so that a fixed sparsity pattern
//! can be refactorised cheaply, which is what the likelihood loop does.

use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// in input order; explicit zeros are kept as structural entries.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let p = next[r];
            cols[p] = c;
            vals[p] = v;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..nrows {
            let (lo, hi) = (counts[r], counts[r + 1]);
            order.clear();
            order.extend(lo..hi);
            // stable sort keeps summation order deterministic
            order.sort_by_key(|&p| cols[p]);
            let mut last = NONE;
            for &p in &order {
                if cols[p] == last {
                    *data.last_mut().unwrap() += vals[p];
                } else {
                    indices.push(cols[p]);
                    data.push(vals[p]);
                    last = cols[p];
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: diag.to_vec(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Iterator over `(col, value)` in row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[lo..hi]
            .iter()
            .copied()
            .zip(self.data[lo..hi].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (lo, hi) = (self.indptr[r], self.indptr[r + 1]);
        match self.indices[lo..hi].binary_search(&c) {
            Ok(p) => self.data[lo + p],
            Err(_) => 0.0,
        }
    }

    pub fn same_pattern(&self, other: &CsrMatrix) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.indptr == other.indptr
            && self.indices == other.indices
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                triplets.push((c, r, v));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, &triplets)
    }

    /// `self * diag(d) * other` (pass `None` for the plain product).
    ///
    /// Structural zeros produced by cancellation are kept, so the pattern only
    /// depends on the operand patterns.
    pub fn mul_diag(&self, diag: Option<&[f64]>, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows);
        if let Some(d) = diag {
            assert_eq!(d.len(), self.ncols);
        }
        let n = other.ncols;
        let mut acc = vec![0.0; n];
        let mut mark = vec![NONE; n];
        let mut cols: Vec<usize> = Vec::new();
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for r in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(r) {
                let a = match diag {
                    Some(d) => a * d[k],
                    None => a,
                };
                for (c, b) in other.row(k) {
                    if mark[c] != r {
                        mark[c] = r;
                        acc[c] = 0.0;
                        cols.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                indices.push(c);
                data.push(acc[c]);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: n,
            indptr,
            indices,
            data,
        }
    }

    /// `alpha * self + beta * other` on the union pattern.
    pub fn add_scaled(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut data = Vec::with_capacity(self.nnz().max(other.nnz()));
        indptr.push(0);
        for r in 0..self.nrows {
            let (mut p, pe) = (self.indptr[r], self.indptr[r + 1]);
            let (mut q, qe) = (other.indptr[r], other.indptr[r + 1]);
            while p < pe || q < qe {
                let cp = if p < pe { self.indices[p] } else { NONE };
                let cq = if q < qe { other.indices[q] } else { NONE };
                if cp < cq {
                    indices.push(cp);
                    data.push(alpha * self.data[p]);
                    p += 1;
                } else if cq < cp {
                    indices.push(cq);
                    data.push(beta * other.data[q]);
                    q += 1;
                } else {
                    indices.push(cp);
                    data.push(alpha * self.data[p] + beta * other.data[q]);
                    p += 1;
                    q += 1;
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            data,
        }
    }

    /// Copies the upper triangle onto the lower one so that the result is
    /// exactly symmetric. The pattern must already be structurally symmetric.
    pub fn symmetrize_from_upper(&mut self) {
        assert_eq!(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[p];
                if c < r {
                    let v = self.get(c, r);
                    self.data[p] = v;
                }
            }
        }
    }

    pub fn is_exactly_symmetric(&self) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        (0..self.nrows).all(|r| self.row(r).all(|(c, v)| self.get(c, r) == v))
    }

    /// Restriction to the given rows and columns (in the given order).
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut col_map = vec![NONE; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_r, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                if col_map[c] != NONE {
                    triplets.push((new_r, col_map[c], v));
                }
            }
        }
        CsrMatrix::from_triplets(rows.len(), cols.len(), &triplets)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// Writes the matrix in `i j value` coordinate text form (0-based).
    pub fn to_coordinate_text(&self) -> String {
        let mut out = String::new();
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                out.push_str(&format!("{r} {c} {v}\n"));
            }
        }
        out
    }
}

/// Nested-dissection ordering of the adjacency graph of a structurally
/// symmetric matrix. Returns `perm` with `perm[new] = old`.
///
/// Separators are middle level sets of a breadth-first search rooted at a
/// pseudo-peripheral vertex; on planar meshes they have `O(√n)` vertices.
pub fn nested_dissection(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let mut perm = Vec::with_capacity(n);
    let mut stamp = vec![0u32; n];
    let mut level = vec![0usize; n];
    let mut next_stamp = 1u32;
    let all: Vec<usize> = (0..n).collect();
    dissect(a, all, &mut perm, &mut stamp, &mut level, &mut next_stamp);
    debug_assert_eq!(perm.len(), n);
    perm
}

const LEAF_SIZE: usize = 48;

fn bfs_levels(
    a: &CsrMatrix,
    start: usize,
    in_set: u32,
    stamp: &mut [u32],
    visit: u32,
    level: &mut [usize],
) -> Vec<usize> {
    // `stamp[v] == in_set` marks membership; visited vertices get `visit`.
    let mut order = vec![start];
    stamp[start] = visit;
    level[start] = 0;
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        for (w, _) in a.row(v) {
            if stamp[w] == in_set {
                stamp[w] = visit;
                level[w] = level[v] + 1;
                order.push(w);
            }
        }
    }
    order
}

fn dissect(
    a: &CsrMatrix,
    nodes: Vec<usize>,
    perm: &mut Vec<usize>,
    stamp: &mut [u32],
    level: &mut [usize],
    next_stamp: &mut u32,
) {
    if nodes.len() <= LEAF_SIZE {
        perm.extend(nodes);
        return;
    }
    let mut fresh = || {
        let s = *next_stamp;
        *next_stamp += 1;
        s
    };
    let set = fresh();
    for &v in &nodes {
        stamp[v] = set;
    }
    let degree = |v: usize, stamp: &[u32], tag: u32| a.row(v).filter(|&(w, _)| stamp[w] == tag).count();

    // pseudo-peripheral root: repeat BFS from a minimum-degree vertex of the last level
    let mut root = nodes[0];
    let mut depth = 0;
    for _ in 0..4 {
        let visit = fresh();
        let order = bfs_levels(a, root, set, stamp, visit, level);
        let new_depth = level[*order.last().unwrap()];
        // restore membership for the next sweep
        for &v in &order {
            stamp[v] = set;
        }
        if new_depth <= depth && depth > 0 {
            break;
        }
        depth = new_depth;
        let last: Vec<usize> = order.iter().copied().filter(|&v| level[v] == depth).collect();
        root = *last
            .iter()
            .min_by_key(|&&v| (degree(v, stamp, set), v))
            .unwrap();
    }
    let visit = fresh();
    let order = bfs_levels(a, root, set, stamp, visit, level);

    if order.len() < nodes.len() {
        // disconnected: handle the reached component and the rest separately
        let rest: Vec<usize> = nodes.iter().copied().filter(|&v| stamp[v] == set).collect();
        dissect(a, order, perm, stamp, level, next_stamp);
        dissect(a, rest, perm, stamp, level, next_stamp);
        return;
    }
    let depth = level[*order.last().unwrap()];
    if depth < 2 {
        perm.extend(order);
        return;
    }
    let half = order.len() / 2;
    let mut sep_level = level[order[half]];
    sep_level = sep_level.clamp(1, depth - 1);
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut sep = Vec::new();
    for &v in &order {
        match level[v].cmp(&sep_level) {
            std::cmp::Ordering::Less => left.push(v),
            std::cmp::Ordering::Equal => sep.push(v),
            std::cmp::Ordering::Greater => right.push(v),
        }
    }
    dissect(a, left, perm, stamp, level, next_stamp);
    dissect(a, right, perm, stamp, level, next_stamp);
    perm.extend(sep);
}

/// Ordering, elimination tree and factor layout for a fixed sparsity pattern.
#[derive(Debug)]
pub struct SymbolicCholesky {
    n: usize,
    perm: Vec<usize>,
    /// Pattern of the matrix the analysis was computed for.
    pattern_indptr: Vec<usize>,
    pattern_indices: Vec<usize>,
    /// Upper triangle of the permuted matrix in CSC: rows `<= k` of column `k`,
    /// with positions into the source matrix's data array.
    up_colptr: Vec<usize>,
    up_rows: Vec<usize>,
    up_src: Vec<usize>,
    parent: Vec<usize>,
    l_colptr: Vec<usize>,
}

impl SymbolicCholesky {
    /// Analyses a structurally symmetric square matrix with a nested-dissection ordering.
    pub fn analyze(a: &CsrMatrix) -> Self {
        let perm = nested_dissection(a);
        Self::with_ordering(a, perm)
    }

    pub fn with_ordering(a: &CsrMatrix, perm: Vec<usize>) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
        assert_eq!(perm.len(), n);
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut up_colptr = Vec::with_capacity(n + 1);
        let mut up_rows = Vec::new();
        let mut up_src = Vec::new();
        up_colptr.push(0);
        for k in 0..n {
            let old = perm[k];
            for p in a.indptr[old]..a.indptr[old + 1] {
                let i = iperm[a.indices[p]];
                if i <= k {
                    up_rows.push(i);
                    up_src.push(p);
                }
            }
            up_colptr.push(up_rows.len());
        }

        // elimination tree
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for p in up_colptr[k]..up_colptr[k + 1] {
                let mut i = up_rows[p];
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        // column counts via row subtrees
        let mut counts = vec![1usize; n];
        let mut mark = vec![NONE; n];
        let mut stack = Vec::new();
        for k in 0..n {
            mark[k] = k;
            for p in up_colptr[k]..up_colptr[k + 1] {
                let mut i = up_rows[p];
                stack.clear();
                while mark[i] != k {
                    mark[i] = k;
                    stack.push(i);
                    i = parent[i];
                }
                for &j in &stack {
                    counts[j] += 1;
                }
            }
        }
        let mut l_colptr = Vec::with_capacity(n + 1);
        l_colptr.push(0);
        for k in 0..n {
            l_colptr.push(l_colptr[k] + counts[k]);
        }

        SymbolicCholesky {
            n,
            perm,
            pattern_indptr: a.indptr.clone(),
            pattern_indices: a.indices.clone(),
            up_colptr,
            up_rows,
            up_src,
            parent,
            l_colptr,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Number of nonzeros in the Cholesky factor, diagonal included.
    pub fn factor_nnz(&self) -> usize {
        self.l_colptr[self.n]
    }

    pub fn matches(&self, a: &CsrMatrix) -> bool {
        a.nrows() == self.n && a.indptr == self.pattern_indptr && a.indices == self.pattern_indices
    }
}

/// Numeric Cholesky factor `P A Pᵀ = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky>,
    l_rows: Vec<usize>,
    l_vals: Vec<f64>,
}

impl CholeskyFactor {
    /// Analyses and factorises in one go.
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let sym = Arc::new(SymbolicCholesky::analyze(a));
        Self::factorize(sym, a)
    }

    /// Numeric factorisation reusing a symbolic analysis of the same pattern.
    pub fn factorize(symbolic: Arc<SymbolicCholesky>, a: &CsrMatrix) -> Result<Self> {
        if !symbolic.matches(a) {
            return Err(Error::invalid(
                "sparsity pattern differs from the symbolic analysis",
            ));
        }
        let s = &*symbolic;
        let n = s.n;
        let nnz = s.factor_nnz();
        let mut l_rows = vec![0usize; nnz];
        let mut l_vals = vec![0.0; nnz];
        let mut next: Vec<usize> = s.l_colptr[..n].to_vec();
        let mut x = vec![0.0; n];
        let mut mark = vec![NONE; n];
        let mut pattern = vec![0usize; n];
        let mut path = Vec::new();

        for k in 0..n {
            // nonzero pattern of row k of L, in topological order
            let mut top = n;
            mark[k] = k;
            for p in s.up_colptr[k]..s.up_colptr[k + 1] {
                let mut i = s.up_rows[p];
                x[i] += a.data[s.up_src[p]];
                path.clear();
                while mark[i] != k {
                    mark[i] = k;
                    path.push(i);
                    i = s.parent[i];
                }
                while let Some(v) = path.pop() {
                    top -= 1;
                    pattern[top] = v;
                }
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &pattern[top..n] {
                let lki = x[i] / l_vals[s.l_colptr[i]];
                x[i] = 0.0;
                for p in s.l_colptr[i] + 1..next[i] {
                    x[l_rows[p]] -= l_vals[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                l_rows[p] = k;
                l_vals[p] = lki;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    column: s.perm[k],
                    pivot: d,
                });
            }
            let p = next[k];
            next[k] += 1;
            l_rows[p] = k;
            l_vals[p] = d.sqrt();
        }
        Ok(CholeskyFactor {
            symbolic,
            l_rows,
            l_vals,
        })
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn n(&self) -> usize {
        self.symbolic.n
    }

    /// `log det A = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        let s = &self.symbolic;
        2.0 * (0..s.n).map(|j| self.l_vals[s.l_colptr[j]].ln()).sum::<f64>()
    }

    fn forward_in_place(&self, y: &mut [f64]) {
        let s = &self.symbolic;
        for j in 0..s.n {
            let lo = s.l_colptr[j];
            y[j] /= self.l_vals[lo];
            let yj = y[j];
            if yj != 0.0 {
                for p in lo + 1..s.l_colptr[j + 1] {
                    y[self.l_rows[p]] -= self.l_vals[p] * yj;
                }
            }
        }
    }

    fn backward_in_place(&self, y: &mut [f64]) {
        let s = &self.symbolic;
        for j in (0..s.n).rev() {
            let lo = s.l_colptr[j];
            let mut v = y[j];
            for p in lo + 1..s.l_colptr[j + 1] {
                v -= self.l_vals[p] * y[self.l_rows[p]];
            }
            y[j] = v / self.l_vals[lo];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = &self.symbolic;
        assert_eq!(b.len(), s.n);
        let mut y: Vec<f64> = s.perm.iter().map(|&old| b[old]).collect();
        self.forward_in_place(&mut y);
        self.backward_in_place(&mut y);
        let mut x = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// `bᵀ A⁻¹ b`, computed with a single triangular solve.
    pub fn inverse_quadratic_form(&self, b: &[f64]) -> f64 {
        let s = &self.symbolic;
        let mut y: Vec<f64> = s.perm.iter().map(|&old| b[old]).collect();
        self.forward_in_place(&mut y);
        y.iter().map(|v| v * v).sum()
    }

    /// Maps standard normal `z` to a draw with covariance `A⁻¹`
    /// (solves `Lᵀ y = z` and undoes the permutation).
    pub fn sample_from_standard(&self, z: &[f64]) -> Vec<f64> {
        let s = &self.symbolic;
        assert_eq!(z.len(), s.n);
        let mut y = z.to_vec();
        self.backward_in_place(&mut y);
        let mut x = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Reuses one symbolic analysis across matrices that share a sparsity pattern.
#[derive(Debug, Default)]
pub struct SymbolicCache {
    inner: Mutex<Option<Arc<SymbolicCholesky>>>,
}

impl SymbolicCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Factorises `a`, analysing it only if the cached pattern differs.
    pub fn factor(&self, a: &CsrMatrix) -> Result<CholeskyFactor> {
        let sym = {
            let mut guard = self.inner.lock().expect("symbolic cache poisoned");
            match guard.as_ref() {
                Some(s) if s.matches(a) => s.clone(),
                _ => {
                    let s = Arc::new(SymbolicCholesky::analyze(a));
                    *guard = Some(s.clone());
                    s
                }
            }
        };
        CholeskyFactor::factorize(sym, a)
    }
}
