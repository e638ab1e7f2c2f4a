//! Symmetric sparse matrices stored as their upper triangle in compressed
//! row form, and an envelope LDLᵀ factorization with reverse Cuthill–McKee
//! ordering.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("index ({0}, {1}) out of range for dimension {2}")]
    Index(usize, usize, usize),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("zero or tiny pivot {pivot:e} at row {row}")]
    Pivot { row: usize, pivot: f64 },
    #[error("envelope of {0} entries exceeds the memory budget")]
    TooLarge(usize),
    #[error("matrix parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Symmetric matrix; only entries with `col >= row` are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Triplet accumulator. Duplicate entries are summed in insertion order so
/// that the result does not depend on anything but the call sequence.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        TripletBuilder { n, entries: Vec::with_capacity(cap) }
    }

    /// Adds `v` to entry `(i, j)`; the lower-triangle position is mirrored.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        self.entries.push((r, c, v));
    }

    pub fn build(mut self) -> SparseSymmetric {
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::new();
        let mut vals: Vec<f64> = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseSymmetric { n: self.n, row_ptr, cols, vals }
    }
}

impl SparseSymmetric {
    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let n = a.len();
        let mut b = TripletBuilder::new(n);
        for i in 0..n {
            for j in i..n {
                if a[i][j] != 0.0 || i == j {
                    b.add(i, j, a[i][j]);
                }
            }
        }
        b.build()
    }

    pub fn identity(n: usize) -> Self {
        SparseSymmetric { n, row_ptr: (0..=n).collect(), cols: (0..n).collect(), vals: vec![1.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored (upper-triangle) entries.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Stored entries of row `i` as `(col, value)` with `col >= i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[range.clone()].binary_search(&c) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = M x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let xi = x[i];
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let (j, v) = (self.cols[k], self.vals[k]);
                acc += v * x[j];
                if j != i {
                    y[j] += v * xi;
                }
            }
            y[i] += acc;
        }
    }

    /// `xᵀ M y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let my = self.mul_vec(y);
        x.iter().zip(&my).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// `alpha·self + beta·other`.
    pub fn combine(&self, alpha: f64, other: &SparseSymmetric, beta: f64) -> Result<Self, SparseError> {
        if self.n != other.n {
            return Err(SparseError::Dimension(self.n, other.n));
        }
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut vals = Vec::with_capacity(cols.capacity());
        for i in 0..self.n {
            let (mut a, ea) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let (mut b, eb) = (other.row_ptr[i], other.row_ptr[i + 1]);
            while a < ea || b < eb {
                let ca = if a < ea { self.cols[a] } else { usize::MAX };
                let cb = if b < eb { other.cols[b] } else { usize::MAX };
                if ca == cb {
                    cols.push(ca);
                    vals.push(alpha * self.vals[a] + beta * other.vals[b]);
                    a += 1;
                    b += 1;
                } else if ca < cb {
                    cols.push(ca);
                    vals.push(alpha * self.vals[a]);
                    a += 1;
                } else {
                    cols.push(cb);
                    vals.push(beta * other.vals[b]);
                    b += 1;
                }
            }
            row_ptr[i + 1] = cols.len();
        }
        Ok(SparseSymmetric { n: self.n, row_ptr, cols, vals })
    }

    /// Principal submatrix on `keep` (ascending indices), renumbered.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut row_ptr = vec![0usize; keep.len() + 1];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for (new, &old) in keep.iter().enumerate() {
            for (c, v) in self.row(old) {
                if map[c] != usize::MAX {
                    cols.push(map[c]);
                    vals.push(v);
                }
            }
            row_ptr[new + 1] = cols.len();
        }
        SparseSymmetric { n: keep.len(), row_ptr, cols, vals }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        d
    }

    /// Adjacency lists of the symmetric sparsity graph (no self loops).
    pub fn graph(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                if j != i {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        adj
    }

    /// Coordinate text export, 1-based upper triangle.
    pub fn to_text(&self) -> String {
        let mut out = format!("conelayer-matrix v1 {} {} sym\n", self.n, self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out.push_str(&format!("{} {} {:.16e}\n", i + 1, j + 1, v));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SparseError> {
        let err = |line: usize, msg: &str| SparseError::Parse { line, msg: msg.to_string() };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty input"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 5 || h[0] != "conelayer-matrix" || h[1] != "v1" || h[4] != "sym" {
            return Err(err(1, "bad header"));
        }
        let n: usize = h[2].parse().map_err(|_| err(1, "bad dimension"))?;
        let nnz: usize = h[3].parse().map_err(|_| err(1, "bad nnz"))?;
        let mut b = TripletBuilder::with_capacity(n, nnz);
        let mut count = 0;
        for (ln, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            let p: Vec<&str> = l.split_whitespace().collect();
            if p.len() != 3 {
                return Err(err(ln + 1, "expected `i j value`"));
            }
            let i: usize = p[0].parse().map_err(|_| err(ln + 1, "bad row"))?;
            let j: usize = p[1].parse().map_err(|_| err(ln + 1, "bad column"))?;
            let v: f64 = p[2].parse().map_err(|_| err(ln + 1, "bad value"))?;
            if i == 0 || j == 0 || i > n || j > n || j < i {
                return Err(err(ln + 1, "index outside the upper triangle"));
            }
            b.add(i - 1, j - 1, v);
            count += 1;
        }
        if count != nnz {
            return Err(err(0, &format!("expected {nnz} entries, found {count}")));
        }
        Ok(b.build())
    }
}

/// Reverse Cuthill–McKee ordering. Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let degree = |v: usize| adj[v].len();
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(adj, seed);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nb.sort_by_key(|&w| (degree(w), w));
            for w in nb {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adj: &[Vec<usize>], start: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; adj.len()];
    seen[start] = true;
    let mut levels = vec![vec![start]];
    loop {
        let mut next = Vec::new();
        for &v in levels.last().unwrap() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return levels;
        }
        levels.push(next);
    }
}

fn pseudo_peripheral(adj: &[Vec<usize>], seed: usize) -> usize {
    let mut v = seed;
    let mut depth = bfs_levels(adj, v).len();
    for _ in 0..10 {
        let levels = bfs_levels(adj, v);
        let last = levels.last().unwrap();
        let u = *last.iter().min_by_key(|&&w| (adj[w].len(), w)).unwrap();
        let d = bfs_levels(adj, u).len();
        if d <= depth {
            break;
        }
        depth = d;
        v = u;
    }
    v
}

/// Envelope (profile) LDLᵀ factorization of a symmetric matrix in a
/// bandwidth-reducing ordering. No pivoting: the factorization exists when
/// all leading minors are nonzero, which holds generically for shifted
/// pencils `A - σB`.
#[derive(Debug, Clone)]
pub struct EnvelopeLdl {
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    l: Vec<f64>,
    d: Vec<f64>,
}

/// Upper bound on stored envelope entries (about 2.4 GB of f64).
pub const ENVELOPE_BUDGET: usize = 300_000_000;

impl EnvelopeLdl {
    pub fn factor(a: &SparseSymmetric) -> Result<Self, SparseError> {
        let perm = rcm_ordering(&a.graph());
        Self::factor_with(a, perm)
    }

    pub fn factor_with(a: &SparseSymmetric, perm: Vec<usize>) -> Result<Self, SparseError> {
        let n = a.dim();
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for (j, _) in a.row(i) {
                let (p, q) = (inv[i], inv[j]);
                let (r, c) = if p >= q { (p, q) } else { (q, p) };
                first[r] = first[r].min(c);
            }
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i]);
        }
        if start[n] > ENVELOPE_BUDGET {
            return Err(SparseError::TooLarge(start[n]));
        }
        let mut l = vec![0.0; start[n]];
        let mut d = vec![0.0; n];
        for i in 0..n {
            for (j, v) in a.row(i) {
                let (p, q) = (inv[i], inv[j]);
                let (r, c) = if p >= q { (p, q) } else { (q, p) };
                if r == c {
                    d[r] = v;
                } else {
                    l[start[r] + c - first[r]] = v;
                }
            }
        }
        let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        // row i holds a_ij, overwritten by g_j = l_ij d_j, then by l_ij
        for i in 0..n {
            let fi = first[i];
            let (head, row_i) = l.split_at_mut(start[i]);
            let row_i = &mut row_i[..i - fi];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                if k0 < j {
                    let row_j = &head[start[j] + k0 - fj..start[j] + j - fj];
                    let gi = &row_i[k0 - fi..j - fi];
                    let s: f64 = gi.iter().zip(row_j).map(|(a, b)| a * b).sum();
                    row_i[j - fi] -= s;
                }
            }
            let mut di = d[i];
            for j in fi..i {
                let g = row_i[j - fi];
                let lij = g / d[j];
                di -= g * lij;
                row_i[j - fi] = lij;
            }
            if !(di.abs() > 1e-14 * scale) || !di.is_finite() {
                return Err(SparseError::Pivot { row: i, pivot: di });
            }
            d[i] = di;
        }
        Ok(EnvelopeLdl { perm, first, start, l, d })
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn envelope_size(&self) -> usize {
        self.l.len()
    }

    /// Number of negative pivots, i.e. eigenvalues below zero (Sylvester).
    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v < 0.0).count()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.l[self.start[i]..self.start[i + 1]];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] -= s;
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let yi = y[i];
            let row = &self.l[self.start[i]..self.start[i + 1]];
            for (yk, a) in y[fi..i].iter_mut().zip(row) {
                *yk -= a * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
