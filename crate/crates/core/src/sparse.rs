//! Square sparse matrices in compressed row form and the kernels built on them.
//!
//! Every constructor and kernel returns a matrix whose rows hold strictly
//! increasing column indices, with no duplicates and no stored zeros, so
//! `nnz` is always the true support size.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Default ceiling on the number of stored entries a product may produce.
pub const DEFAULT_NNZ_CAP: usize = 50_000_000;

#[derive(Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl fmt::Debug for SparseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SparseMatrix(n={}, nnz={})", self.n, self.nnz())?;
        if self.nnz() <= 32 {
            for (i, j, v) in self.iter() {
                write!(f, "\n  ({i}, {j}) = {v}")?;
            }
        }
        Ok(())
    }
}

impl SparseMatrix {
    /// Builds a matrix from raw compressed-row arrays, rejecting any that
    /// break the container invariants.
    pub fn from_raw_parts(
        n: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let m = Self {
            n,
            row_offsets,
            col_indices,
            values,
        };
        m.validate().map_err(Error::InvalidConfig)?;
        Ok(m)
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            row_offsets: vec![0; n + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    /// Diagonal matrix; zero entries are not stored.
    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for (i, &d) in diag.iter().enumerate() {
            if d != 0.0 {
                col_indices.push(i);
                values.push(d);
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            n,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Builds from `(row, col, value)` triplets in any order. Duplicates are
    /// summed and resulting zeros dropped.
    pub fn from_triplets<I>(n: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch(format!(
                    "entry ({i}, {j}) outside {n}x{n}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("entry ({i}, {j}) = {v}")));
            }
            entries.push((i, j, v));
        }
        entries.sort_by_key(|e| (e.0, e.1));

        let mut row_offsets = vec![0usize; n + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut rows_of = Vec::with_capacity(entries.len());
        let mut k = 0;
        while k < entries.len() {
            let (i, j, mut v) = entries[k];
            k += 1;
            while k < entries.len() && entries[k].0 == i && entries[k].1 == j {
                v += entries[k].2;
                k += 1;
            }
            if v != 0.0 {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("summed entry ({i}, {j})")));
                }
                rows_of.push(i);
                col_indices.push(j);
                values.push(v);
            }
        }
        for &i in &rows_of {
            row_offsets[i + 1] += 1;
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(Self {
            n,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from a row-major `n × n` dense buffer.
    pub fn from_dense(n: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "dense buffer of {} for n={n}",
                dense.len()
            )));
        }
        Self::from_triplets(
            n,
            dense
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(k, &v)| (k / n, k % n, v)),
        )
    }

    /// Symmetric binary adjacency from undirected edges; duplicates collapse.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let m = Self::from_triplets(
            n,
            edges.iter().flat_map(|&(i, j)| [(i, j, 1.0), (j, i, 1.0)]),
        )?;
        Ok(m.binarize())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for (i, j, v) in self.iter() {
            out[i * self.n + j] = v;
        }
        out
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[a..b], &self.values[a..b])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    /// Checks every container invariant, describing the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.row_offsets.len() != self.n + 1 {
            return Err(format!(
                "row_offsets has length {}, expected {}",
                self.row_offsets.len(),
                self.n + 1
            ));
        }
        if self.row_offsets[0] != 0 {
            return Err("row_offsets[0] != 0".into());
        }
        if self.row_offsets[self.n] != self.col_indices.len()
            || self.col_indices.len() != self.values.len()
        {
            return Err("row_offsets[n], col_indices and values disagree on nnz".into());
        }
        for i in 0..self.n {
            let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
            if a > b {
                return Err(format!("row_offsets decreases at row {i}"));
            }
            let cols = &self.col_indices[a..b];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(format!("row {i} columns not strictly increasing"));
            }
            if cols.last().is_some_and(|&c| c >= self.n) {
                return Err(format!("row {i} has column index >= n"));
            }
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite() || **v == 0.0) {
            return Err(format!("stored value {v} is zero or non-finite"));
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n + 1];
        for &j in &self.col_indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.n {
            counts[j + 1] += counts[j];
        }
        let row_offsets = counts.clone();
        let mut next = counts;
        let mut col_indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // rows are visited in order, so each transposed row fills in increasing column order
        for (i, j, v) in self.iter() {
            let k = next[j];
            col_indices[k] = i;
            values[k] = v;
            next[j] += 1;
        }
        Self {
            n: self.n,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        *self == self.transpose()
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 1.0)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0)
    }

    /// Support indicator: strictly positive entries become 1, others vanish.
    pub fn binarize(&self) -> Self {
        self.filter_map(|_, _, v| (v > 0.0).then_some(1.0))
    }

    pub fn without_diagonal(&self) -> Self {
        self.filter_map(|i, j, v| (i != j).then_some(v))
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.filter_map(|_, _, v| Some(v * alpha))
    }

    /// Row sums.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).1.iter().sum()).collect()
    }

    fn filter_map(&self, mut f: impl FnMut(usize, usize, f64) -> Option<f64>) -> Self {
        let mut row_offsets = Vec::with_capacity(self.n + 1);
        let mut col_indices = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        row_offsets.push(0);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if let Some(w) = f(i, j, v).filter(|w| *w != 0.0) {
                    col_indices.push(j);
                    values.push(w);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            n: self.n,
            row_offsets,
            col_indices,
            values,
        }
    }

    fn check_same_n(&self, other: &SparseMatrix, op: &str) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch(format!(
                "{op}: n={} vs n={}",
                self.n, other.n
            )));
        }
        Ok(())
    }

    /// Exact sparse product `self · other` under the default nnz cap.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        self.matmul_capped(other, DEFAULT_NNZ_CAP)
    }

    /// Row-wise sparse-accumulator product. Errors once the output would hold
    /// more than `cap` entries.
    pub fn matmul_capped(&self, other: &SparseMatrix, cap: usize) -> Result<SparseMatrix> {
        self.check_same_n(other, "matmul")?;
        let n = self.n;
        let mut acc = vec![0.0f64; n];
        let mut seen = vec![false; n];
        let mut touched: Vec<usize> = Vec::new();

        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0usize);

        for i in 0..n {
            let (a_cols, a_vals) = self.row(i);
            let row_flops: usize = a_cols.iter().map(|&l| other.row_nnz(l)).sum();
            if row_flops * 16 >= n {
                // dense enough that an ordered scan beats tracking and sorting
                for (&l, &a) in a_cols.iter().zip(a_vals) {
                    let (b_cols, b_vals) = other.row(l);
                    for (&j, &b) in b_cols.iter().zip(b_vals) {
                        acc[j] += a * b;
                        seen[j] = true;
                    }
                }
                touched.extend((0..n).filter(|&j| seen[j]));
            } else {
                for (&l, &a) in a_cols.iter().zip(a_vals) {
                    let (b_cols, b_vals) = other.row(l);
                    for (&j, &b) in b_cols.iter().zip(b_vals) {
                        if !seen[j] {
                            seen[j] = true;
                            touched.push(j);
                        }
                        acc[j] += a * b;
                    }
                }
                touched.sort_unstable();
            }
            for &j in &touched {
                let v = acc[j];
                if v != 0.0 {
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("product entry ({i}, {j})")));
                    }
                    col_indices.push(j);
                    values.push(v);
                }
                acc[j] = 0.0;
                seen[j] = false;
            }
            touched.clear();
            if col_indices.len() > cap {
                return Err(Error::NnzCapExceeded {
                    nnz: col_indices.len(),
                    cap,
                });
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseMatrix {
            n,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// `self^k` by iterated left multiplication; `k = 0` yields the identity.
    pub fn pow(&self, k: usize, cap: usize) -> Result<SparseMatrix> {
        let mut out = SparseMatrix::identity(self.n);
        for _ in 0..k {
            out = self.matmul_capped(&out, cap)?;
        }
        Ok(out)
    }

    /// Entrywise product; the support is the intersection of both supports.
    pub fn hadamard(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        self.check_same_n(other, "hadamard")?;
        self.merge(other, |a, b| match (a, b) {
            (Some(x), Some(y)) => x * y,
            _ => 0.0,
        })
    }

    pub fn add(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        self.check_same_n(other, "add")?;
        self.merge(other, |a, b| a.unwrap_or(0.0) + b.unwrap_or(0.0))
    }

    fn merge(
        &self,
        other: &SparseMatrix,
        f: impl Fn(Option<f64>, Option<f64>) -> f64,
    ) -> Result<SparseMatrix> {
        let n = self.n;
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for i in 0..n {
            let (ac, av) = self.row(i);
            let (bc, bv) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ac.len() || q < bc.len() {
                let (j, v) = match (ac.get(p), bc.get(q)) {
                    (Some(&x), Some(&y)) if x == y => {
                        p += 1;
                        q += 1;
                        (x, f(Some(av[p - 1]), Some(bv[q - 1])))
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        p += 1;
                        (x, f(Some(av[p - 1]), None))
                    }
                    (Some(&x), None) => {
                        p += 1;
                        (x, f(Some(av[p - 1]), None))
                    }
                    (_, Some(&y)) => {
                        q += 1;
                        (y, f(None, Some(bv[q - 1])))
                    }
                    (None, None) => unreachable!(),
                };
                if v != 0.0 {
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("entry ({i}, {j})")));
                    }
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseMatrix {
            n,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// `self + I`
    pub fn add_identity(&self) -> SparseMatrix {
        self.add(&SparseMatrix::identity(self.n))
            .expect("identity shares n")
    }

    /// `D^{-1/2} · self · D^{-1/2}` with `D` the row-sum diagonal. Zero-degree
    /// rows stay empty.
    pub fn sym_normalize(&self) -> Result<SparseMatrix> {
        if let Some((row, col, value)) = self.iter().find(|e| e.2 < 0.0) {
            return Err(Error::NegativeEntry { row, col, value });
        }
        let inv_sqrt: Vec<f64> = self
            .degrees()
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        Ok(self.filter_map(|i, j, v| Some(inv_sqrt[i] * v * inv_sqrt[j])))
    }

    /// `(self + selfᵀ) / 2`
    pub fn symmetrize(&self) -> SparseMatrix {
        self.add(&self.transpose())
            .expect("transpose shares n")
            .scale(0.5)
    }

    /// Sparse-times-dense product `self · x`.
    pub fn mul_dense(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "sparse n={} times dense {}x{}",
                self.n,
                x.rows(),
                x.cols()
            )));
        }
        let mut out = DenseMatrix::zeros(self.n, x.cols());
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let out_row = out.row_mut(i);
            for (&j, &v) in cols.iter().zip(vals) {
                for (o, &xv) in out_row.iter_mut().zip(x.row(j)) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    /// Writes the text dump: an `n nnz` header, then one `row col value`
    /// line per stored entry in row-major order.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.n, self.nnz())?;
        for (i, j, v) in self.iter() {
            writeln!(w, "{i} {j} {v}")?;
        }
        Ok(())
    }

    pub fn to_dump_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_dump(&mut buf)
            .expect("writing to Vec cannot fail");
        String::from_utf8(buf).expect("dump is ASCII")
    }

    pub fn read_dump<R: BufRead>(reader: R, origin: &Path) -> Result<SparseMatrix> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut lines = reader.lines().enumerate();
        let (n, nnz) = loop {
            let Some((ln, line)) = lines.next() else {
                return Err(parse_err(0, "missing header".into()));
            };
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let n = it.next().and_then(|t| t.parse::<usize>().ok());
            let nnz = it.next().and_then(|t| t.parse::<usize>().ok());
            match (n, nnz, it.next()) {
                (Some(n), Some(nnz), None) => break (n, nnz),
                _ => return Err(parse_err(ln + 1, "header must be `n nnz`".into())),
            }
        };
        let mut row_offsets = vec![0usize; n + 1];
        let mut col_indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        let mut last: Option<(usize, usize)> = None;
        for (ln, line) in lines {
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let [i, j, v] = toks[..] else {
                return Err(parse_err(ln + 1, "expected `row col value`".into()));
            };
            let i: usize = i.parse().map_err(|e| parse_err(ln + 1, format!("{e}")))?;
            let j: usize = j.parse().map_err(|e| parse_err(ln + 1, format!("{e}")))?;
            let v: f64 = v.parse().map_err(|e| parse_err(ln + 1, format!("{e}")))?;
            if i >= n || j >= n {
                return Err(parse_err(ln + 1, format!("({i}, {j}) outside n={n}")));
            }
            if last.is_some_and(|p| p >= (i, j)) {
                return Err(parse_err(ln + 1, "entries not sorted row-major".into()));
            }
            if v == 0.0 || !v.is_finite() {
                return Err(parse_err(ln + 1, format!("invalid stored value {v}")));
            }
            last = Some((i, j));
            row_offsets[i + 1] += 1;
            col_indices.push(j);
            values.push(v);
        }
        if values.len() != nnz {
            return Err(parse_err(
                0,
                format!("header declares {nnz} entries, found {}", values.len()),
            ));
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        SparseMatrix::from_raw_parts(n, row_offsets, col_indices, values)
    }

    pub fn load_dump(path: &Path) -> Result<SparseMatrix> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_dump(BufReader::new(f), path)
    }
}
