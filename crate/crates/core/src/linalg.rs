//! Sparse matrices, factorization wrappers over faer, and a Lanczos solver for
//! extremal generalized eigenvalues.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{Mat, MatMut, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, duplicate-free rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Coordinate-format accumulator.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Triplets {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            rows: Vec::with_capacity(n),
            cols: Vec::with_capacity(n),
            vals: Vec::with_capacity(n),
        }
    }

    #[inline]
    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        self.rows.push(r);
        self.cols.push(c);
        self.vals.push(v);
    }

    pub fn extend(&mut self, other: &Triplets) {
        self.rows.extend_from_slice(&other.rows);
        self.cols.extend_from_slice(&other.cols);
        self.vals.extend_from_slice(&other.vals);
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn into_csr(self, nrows: usize, ncols: usize) -> Csr {
        Csr::from_triplets(nrows, ncols, &self.rows, &self.cols, &self.vals)
    }
}

impl Csr {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn diagonal_matrix(d: &[f64]) -> Self {
        let mut m = Self::identity(d.len());
        m.values.copy_from_slice(d);
        m
    }

    /// Duplicates are summed; explicit zeros are kept so patterns stay stable.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        rows: &[usize],
        cols: &[usize],
        vals: &[f64],
    ) -> Self {
        assert_eq!(rows.len(), cols.len());
        assert_eq!(rows.len(), vals.len());
        let mut count = vec![0usize; nrows + 1];
        for &r in rows {
            assert!(r < nrows, "row index out of range");
            count[r + 1] += 1;
        }
        for i in 0..nrows {
            count[i + 1] += count[i];
        }
        let mut next = count.clone();
        let mut tmp: Vec<(usize, f64)> = vec![(0, 0.0); rows.len()];
        for k in 0..rows.len() {
            assert!(cols[k] < ncols, "column index out of range");
            let slot = &mut next[rows[k]];
            tmp[*slot] = (cols[k], vals[k]);
            *slot += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len());
        indptr.push(0);
        for r in 0..nrows {
            let seg = &mut tmp[count[r]..count[r + 1]];
            seg.sort_unstable_by_key(|e| e.0);
            let mut last = usize::MAX;
            for &(c, v) in seg.iter() {
                if c == last {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = c;
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (idx, val) = self.row(r);
        match idx.binary_search(&c) {
            Ok(k) => val[k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let (idx, val) = self.row(r);
            *yr = idx.iter().zip(val).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    /// `xᵀ A x`
    pub fn quad(&self, x: &[f64]) -> f64 {
        let ax = self.matvec(x);
        dot(x, &ax)
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.matvec(y);
        dot(x, &ay)
    }

    pub fn transpose(&self) -> Csr {
        let mut count = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            count[c + 1] += 1;
        }
        for i in 0..self.ncols {
            count[i + 1] += count[i];
        }
        let mut next = count.clone();
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.nrows {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                let k = next[c];
                indices[k] = r;
                values[k] = v;
                next[c] += 1;
            }
        }
        Csr {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: count,
            indices,
            values,
        }
    }

    /// Sparse product `self * other` (Gustavson).
    pub fn matmul(&self, other: &Csr) -> Csr {
        assert_eq!(self.ncols, other.nrows);
        let n = other.ncols;
        let mut marker = vec![usize::MAX; n];
        let mut acc = vec![0.0; n];
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let mut cols: Vec<usize> = Vec::new();
        for r in 0..self.nrows {
            cols.clear();
            let (ia, va) = self.row(r);
            for (&k, &a) in ia.iter().zip(va) {
                let (ib, vb) = other.row(k);
                for (&c, &b) in ib.iter().zip(vb) {
                    if marker[c] != r {
                        marker[c] = r;
                        acc[c] = 0.0;
                        cols.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                indices.push(c);
                values.push(acc[c]);
            }
            indptr.push(indices.len());
        }
        Csr {
            nrows: self.nrows,
            ncols: n,
            indptr,
            indices,
            values,
        }
    }

    /// `self + alpha * other` on the union pattern.
    pub fn add_scaled(&self, other: &Csr, alpha: f64) -> Csr {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = Triplets::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.nrows {
            let (i, v) = self.row(r);
            for (&c, &x) in i.iter().zip(v) {
                t.push(r, c, x);
            }
            let (i, v) = other.row(r);
            for (&c, &x) in i.iter().zip(v) {
                t.push(r, c, alpha * x);
            }
        }
        t.into_csr(self.nrows, self.ncols)
    }

    pub fn scaled(&self, alpha: f64) -> Csr {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= alpha);
        m
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    /// Rows and columns kept according to `rmap`/`cmap` (old index → new index).
    pub fn submatrix(
        &self,
        rmap: &[Option<usize>],
        nr: usize,
        cmap: &[Option<usize>],
        nc: usize,
    ) -> Csr {
        let mut indptr = Vec::with_capacity(nr + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut order: Vec<(usize, usize)> = rmap
            .iter()
            .enumerate()
            .filter_map(|(old, new)| new.map(|n| (n, old)))
            .collect();
        order.sort_unstable();
        assert_eq!(order.len(), nr);
        indptr.push(0);
        let mut buf: Vec<(usize, f64)> = Vec::new();
        for &(_, old) in &order {
            buf.clear();
            let (idx, val) = self.row(old);
            for (&c, &v) in idx.iter().zip(val) {
                if let Some(nc_) = cmap[c] {
                    buf.push((nc_, v));
                }
            }
            buf.sort_unstable_by_key(|e| e.0);
            for &(c, v) in &buf {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Csr {
            nrows: nr,
            ncols: nc,
            indptr,
            indices,
            values,
        }
    }

    /// Symmetric restriction to the entries with `keep[i] == true`; returns the
    /// matrix and the old → new map.
    pub fn restrict_symmetric(&self, keep: &[bool]) -> (Csr, Vec<Option<usize>>) {
        let mut map = vec![None; keep.len()];
        let mut n = 0;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                map[i] = Some(n);
                n += 1;
            }
        }
        (self.submatrix(&map, n, &map, n), map)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                m[(r, c)] += v;
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Largest entry of `|A - Aᵀ|`, relative to the largest entry of `|A|`.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let d = self.add_scaled(&t, -1.0);
        let s = self.max_abs();
        if s == 0.0 {
            0.0
        } else {
            d.max_abs() / s
        }
    }

    fn to_faer_csc(&self) -> Result<SparseColMat<usize, f64>> {
        // CSR of A is CSC of Aᵀ.
        let t = self.transpose();
        let sym = SymbolicSparseColMat::new_checked(t.ncols, t.nrows, t.indptr, None, t.indices);
        Ok(SparseColMat::new(sym, t.values))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Sparse Cholesky factor of a symmetric positive definite matrix.
pub struct Cholesky {
    n: usize,
    llt: Llt<usize, f64>,
}

impl Cholesky {
    pub fn factor(a: &Csr) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::LinearAlgebra(
                "Cholesky of a non-square matrix".into(),
            ));
        }
        let m = a.to_faer_csc()?;
        let llt = m
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::LinearAlgebra(format!("sparse Cholesky failed: {e:?}")))?;
        Ok(Self { n: a.nrows, llt })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        let m = MatMut::from_column_major_slice_mut(x, self.n, 1);
        self.llt.solve_in_place(m);
    }

    /// Solves for several right-hand sides stored column-major.
    pub fn solve_many(&self, b: &mut [f64], ncols: usize) {
        assert_eq!(b.len(), self.n * ncols);
        let m = MatMut::from_column_major_slice_mut(b, self.n, ncols);
        self.llt.solve_in_place(m);
    }
}

/// Symbolic Cholesky analysis reused across matrices with one pattern.
pub struct CholeskyPattern {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    symbolic: SymbolicLlt<usize>,
}

impl CholeskyPattern {
    pub fn new(a: &Csr) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::LinearAlgebra("Cholesky of a non-square matrix".into()));
        }
        let m = a.to_faer_csc()?;
        let symbolic = SymbolicLlt::try_new(m.symbolic(), Side::Lower)
            .map_err(|e| Error::LinearAlgebra(format!("symbolic Cholesky failed: {e:?}")))?;
        Ok(Self {
            n: a.nrows,
            indptr: a.indptr.clone(),
            indices: a.indices.clone(),
            symbolic,
        })
    }

    /// Numeric factor of `a`, which must share the analysed pattern.
    pub fn factor(&self, a: &Csr) -> Result<Cholesky> {
        if a.nrows != self.n || a.indptr != self.indptr || a.indices != self.indices {
            return Err(Error::LinearAlgebra("matrix pattern differs from the analysed one".into()));
        }
        let m = a.to_faer_csc()?;
        let llt = Llt::try_new_with_symbolic(self.symbolic.clone(), m.as_ref(), Side::Lower)
            .map_err(|e| Error::LinearAlgebra(format!("sparse Cholesky failed: {e:?}")))?;
        Ok(Cholesky { n: self.n, llt })
    }
}

/// Sparse LU factor of a general square matrix.
pub struct SparseLu {
    n: usize,
    lu: Lu<usize, f64>,
}

impl SparseLu {
    pub fn factor(a: &Csr) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::LinearAlgebra("LU of a non-square matrix".into()));
        }
        let m = a.to_faer_csc()?;
        let lu = m
            .sp_lu()
            .map_err(|e| Error::LinearAlgebra(format!("sparse LU failed: {e:?}")))?;
        Ok(Self { n: a.nrows, lu })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        let m = MatMut::from_column_major_slice_mut(&mut x, self.n, 1);
        self.lu.solve_in_place(m);
        x
    }
}

/// Dense symmetric positive definite factor.
pub struct DenseCholesky {
    n: usize,
    llt: faer::linalg::solvers::Llt<f64>,
}

impl DenseCholesky {
    pub fn factor(a: &Mat<f64>) -> Result<Self> {
        let llt = a
            .llt(Side::Lower)
            .map_err(|e| Error::LinearAlgebra(format!("dense Cholesky failed: {e:?}")))?;
        Ok(Self { n: a.nrows(), llt })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        let m = MatMut::from_column_major_slice_mut(&mut x, self.n, 1);
        self.llt.solve_in_place(m);
        x
    }
}

/// Eigenpairs of a dense symmetric matrix, ascending.
pub fn symmetric_eigen(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("dense eigen solver failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let vals: Vec<f64> = (0..a.nrows()).map(|i| s[i]).collect();
    Ok((vals, evd.U().to_owned()))
}

/// Largest eigenpair of the pencil `H x = λ E x` with `E` symmetric positive
/// definite, from Lanczos in the `E` inner product with full
/// reorthogonalization.
#[derive(Debug, Clone)]
pub struct LanczosResult {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub struct LanczosOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-10,
            seed: 7,
        }
    }
}

pub fn lanczos_max<H, E>(
    n: usize,
    apply_h: H,
    apply_e: E,
    e_factor: &Cholesky,
    opts: &LanczosOptions,
) -> Result<LanczosResult>
where
    H: Fn(&[f64]) -> Vec<f64>,
    E: Fn(&[f64]) -> Vec<f64>,
{
    if n == 0 {
        return Err(Error::Eigen("empty eigenproblem".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nv = dot(&v, &apply_e(&v)).sqrt();
    v.iter_mut().for_each(|x| *x /= nv);

    let kmax = opts.max_iter.min(n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(kmax);
    let mut ebasis: Vec<Vec<f64>> = Vec::with_capacity(kmax);
    let mut alpha = Vec::with_capacity(kmax);
    let mut beta: Vec<f64> = Vec::with_capacity(kmax);
    let mut best = (f64::NAN, Vec::new(), f64::INFINITY);

    for j in 0..kmax {
        let ev = apply_e(&v);
        let hv = apply_h(&v);
        let a = dot(&v, &hv);
        let mut w = e_factor.solve(&hv);
        basis.push(v.clone());
        ebasis.push(ev);
        alpha.push(a);
        // w ⟂_E span(basis), twice for stability
        for _ in 0..2 {
            for (q, eq) in basis.iter().zip(&ebasis) {
                let c = dot(eq, &w);
                axpy(-c, q, &mut w);
            }
        }
        let b = dot(&w, &apply_e(&w)).max(0.0).sqrt();

        let k = j + 1;
        let mut t = Mat::<f64>::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let (vals, vecs) = symmetric_eigen(&t)?;
        let theta = vals[k - 1];
        let resid = (b * vecs[(k - 1, k - 1)]).abs();
        best = (theta, (0..k).map(|i| vecs[(i, k - 1)]).collect(), resid);
        let converged = resid <= opts.tol * theta.abs().max(f64::MIN_POSITIVE);
        if converged || b <= 1e-14 * theta.abs().max(1.0) || k == kmax {
            let mut x = vec![0.0; n];
            for (i, q) in basis.iter().enumerate() {
                axpy(best.1[i], q, &mut x);
            }
            if !converged && b > 1e-14 * theta.abs().max(1.0) && k < n {
                return Err(Error::Eigen(format!(
                    "Lanczos stalled after {k} steps, residual {resid:.3e}"
                )));
            }
            return Ok(LanczosResult {
                value: theta,
                vector: x,
                iterations: k,
                residual: resid,
            });
        }
        beta.push(b);
        v = w.iter().map(|x| x / b).collect();
    }
    Err(Error::Eigen(format!("Lanczos did not run: {:?}", best.2)))
}

/// Dense reference for the largest eigenvalue of `H x = λ E x`.
pub fn dense_generalized_max(h: &Mat<f64>, e: &Mat<f64>) -> Result<f64> {
    let n = h.nrows();
    let llt = e
        .llt(Side::Lower)
        .map_err(|err| Error::LinearAlgebra(format!("{err:?}")))?;
    let l = llt.L().to_owned();
    // C = L⁻¹ H L⁻ᵀ
    let mut linv = Mat::<f64>::identity(n, n);
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(
        l.as_ref(),
        linv.as_mut(),
        faer::Par::Seq,
    );
    let c = &linv * h * linv.transpose();
    let sym = Mat::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let (vals, _) = symmetric_eigen(&sym)?;
    Ok(vals[n - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_spd(n: usize, seed: u64) -> Csr {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Triplets::default();
        for i in 0..n {
            t.push(i, i, 4.0 + rng.gen::<f64>());
            if i + 1 < n {
                let v = rng.gen_range(-1.0..1.0);
                t.push(i, i + 1, v);
                t.push(i + 1, i, v);
            }
            if i + 5 < n {
                let v = rng.gen_range(-0.5..0.5);
                t.push(i, i + 5, v);
                t.push(i + 5, i, v);
            }
        }
        t.into_csr(n, n)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = Csr::from_triplets(2, 2, &[0, 0, 1, 0], &[1, 1, 0, 0], &[1.0, 2.0, 5.0, 4.0]);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.get(1, 0), 5.0);
        assert_eq!(m.nnz(), 3);
    }

    #[test]
    fn product_and_transpose_match_dense() {
        let a = random_spd(12, 1);
        let mut t = Triplets::default();
        for i in 0..12 {
            t.push(i, (i * 7) % 5, i as f64 + 1.0);
        }
        let b = t.into_csr(12, 5);
        let ab = a.matmul(&b).to_dense();
        let dense = a.to_dense() * b.to_dense();
        for i in 0..12 {
            for j in 0..5 {
                assert!((ab[(i, j)] - dense[(i, j)]).abs() < 1e-12);
            }
        }
        assert_eq!(b.transpose().transpose(), b);
    }

    #[test]
    fn cholesky_and_lu_solve() {
        let a = random_spd(40, 3);
        let x: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let b = a.matvec(&x);
        let c = Cholesky::factor(&a).unwrap().solve(&b);
        let l = SparseLu::factor(&a).unwrap().solve(&b);
        for i in 0..40 {
            assert!((c[i] - x[i]).abs() < 1e-12);
            assert!((l[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn lanczos_matches_dense_pencil() {
        let n = 60;
        let e = random_spd(n, 5);
        let h = random_spd(n, 9);
        let fac = Cholesky::factor(&e).unwrap();
        let r = lanczos_max(
            n,
            |v| h.matvec(v),
            |v| e.matvec(v),
            &fac,
            &LanczosOptions::default(),
        )
        .unwrap();
        let exact = dense_generalized_max(&h.to_dense(), &e.to_dense()).unwrap();
        assert!(
            (r.value - exact).abs() < 1e-9 * exact,
            "{} vs {}",
            r.value,
            exact
        );
    }
}
