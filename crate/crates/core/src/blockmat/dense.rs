use std::fmt::Write as _;
use std::ops::{Index, IndexMut};

use crate::counters;
use crate::error::{check_len, Error, Result};

/// A dense real matrix stored column-major, so that its flat storage is
/// `vec(A)` and `vec(ABC) = (Cᵀ ⊗ A) vec(B)` holds without reindexing.
///
/// Storage is registered with the per-thread block-storage counter.
#[derive(PartialEq)]
pub struct DenseBlock {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseBlock {
    fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        counters::alloc_bytes(data.len() * std::mem::size_of::<f64>());
        Self { rows, cols, data }
    }

    /// Wraps column-major `data`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("DenseBlock::new", rows * cols, data.len())?;
        Ok(Self::from_vec_unchecked(rows, cols, data))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_vec_unchecked(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self::from_vec_unchecked(rows, cols, data)
    }

    /// Builds a matrix from row-major nested rows. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        for r in rows {
            check_len("DenseBlock::from_rows", cols, r.len())?;
        }
        Ok(Self::from_fn(rows.len(), cols, |i, j| rows[i][j]))
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Column-major storage, i.e. `vec(self)`.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)]).collect())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.cols)
            .map(|j| self.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn scale(&mut self, alpha: f64) {
        counters::add_flops(self.data.len());
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &DenseBlock) -> Result<()> {
        check_len("DenseBlock::add_scaled rows", self.rows, other.rows)?;
        check_len("DenseBlock::add_scaled cols", self.cols, other.cols)?;
        counters::add_flops(2 * self.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Adds `alpha` to each diagonal entry.
    pub fn shift_diagonal(&mut self, alpha: f64) {
        let n = self.rows.min(self.cols);
        counters::add_flops(n);
        for i in 0..n {
            self[(i, i)] += alpha;
        }
    }

    /// `out += alpha * self * v`.
    pub fn gemv_acc(&self, alpha: f64, v: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("DenseBlock::gemv input", self.cols, v.len())?;
        check_len("DenseBlock::gemv output", self.rows, out.len())?;
        counters::add_flops(2 * self.data.len());
        for (j, &vj) in v.iter().enumerate() {
            let s = alpha * vj;
            if s == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.column(j)) {
                *o += a * s;
            }
        }
        Ok(())
    }

    /// `out += alpha * selfᵀ * v`.
    pub fn gemv_t_acc(&self, alpha: f64, v: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("DenseBlock::gemv_t input", self.rows, v.len())?;
        check_len("DenseBlock::gemv_t output", self.cols, out.len())?;
        counters::add_flops(2 * self.data.len());
        for (j, o) in out.iter_mut().enumerate() {
            let d: f64 = self.column(j).iter().zip(v).map(|(a, b)| a * b).sum();
            *o += alpha * d;
        }
        Ok(())
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows];
        self.gemv_acc(1.0, v, &mut out)?;
        Ok(out)
    }

    pub fn matvec_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.cols];
        self.gemv_t_acc(1.0, v, &mut out)?;
        Ok(out)
    }

    pub fn matmul(&self, other: &DenseBlock) -> Result<DenseBlock> {
        check_len("DenseBlock::matmul inner", self.cols, other.rows)?;
        let mut out = DenseBlock::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let col = &mut out.data[j * self.rows..(j + 1) * self.rows];
            self.gemv_acc(1.0, other.column(j), col)?;
        }
        Ok(out)
    }

    /// Copies `src` into the sub-block starting at `(row, col)`.
    pub fn set_block(&mut self, row: usize, col: usize, src: &DenseBlock) -> Result<()> {
        if row + src.rows > self.rows || col + src.cols > self.cols {
            return Err(Error::DimensionMismatch {
                context: "DenseBlock::set_block",
                expected: self.rows * self.cols,
                actual: (row + src.rows) * (col + src.cols),
            });
        }
        for j in 0..src.cols {
            for i in 0..src.rows {
                self[(row + i, col + j)] = src[(i, j)];
            }
        }
        Ok(())
    }

    pub fn sub_block(&self, row: usize, col: usize, rows: usize, cols: usize) -> DenseBlock {
        DenseBlock::from_fn(rows, cols, |i, j| self[(row + i, col + j)])
    }

    /// Row-major text grid, one matrix row per line, entries separated by spaces.
    pub fn to_text_grid(&self) -> String {
        let mut s = String::new();
        for i in 0..self.rows {
            for j in 0..self.cols {
                if j > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{}", self[(i, j)]);
            }
            s.push('\n');
        }
        s
    }
}

impl Clone for DenseBlock {
    fn clone(&self) -> Self {
        Self::from_vec_unchecked(self.rows, self.cols, self.data.clone())
    }
}

impl Drop for DenseBlock {
    fn drop(&mut self) {
        counters::free_bytes(self.data.len() * std::mem::size_of::<f64>());
    }
}

impl std::fmt::Debug for DenseBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "DenseBlock {}x{} ", self.rows, self.cols)?;
        f.debug_list().entries(self.to_rows()).finish()
    }
}

impl Index<(usize, usize)> for DenseBlock {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i + j * self.rows]
    }
}

impl IndexMut<(usize, usize)> for DenseBlock {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i + j * self.rows]
    }
}

/// Where an LU factorization found no acceptable pivot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotFailure {
    pub column: usize,
    pub pivot: f64,
    pub threshold: f64,
}

/// LU factorization with partial (row) pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct LuFactor {
    lu: DenseBlock,
    perm: Vec<usize>,
    norm1: f64,
}

impl LuFactor {
    /// Factors a square matrix. A pivot whose magnitude is at or below
    /// `rel_tol * max|a_ij|` is rejected.
    pub fn factor(a: &DenseBlock, rel_tol: f64) -> std::result::Result<Self, PivotFailure> {
        assert!(a.is_square(), "LU of a non-square block");
        let n = a.rows;
        let threshold = rel_tol * a.max_abs();
        let norm1 = a.norm1();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut flops = 0;
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[(i, k)]))
                .fold((k, 0.0_f64), |best, (i, v)| {
                    if v.abs() > best.1.abs() {
                        (i, v)
                    } else {
                        best
                    }
                });
            if pivot.abs() <= threshold || pivot == 0.0 || !pivot.is_finite() {
                return Err(PivotFailure {
                    column: k,
                    pivot: pivot.abs(),
                    threshold,
                });
            }
            if p != k {
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = t;
                }
                perm.swap(k, p);
            }
            for i in k + 1..n {
                lu[(i, k)] /= pivot;
            }
            for j in k + 1..n {
                let ukj = lu[(k, j)];
                if ukj == 0.0 {
                    continue;
                }
                for i in k + 1..n {
                    let lik = lu[(i, k)];
                    lu[(i, j)] -= lik * ukj;
                }
            }
            flops += (n - k - 1) + 2 * (n - k - 1) * (n - k - 1);
        }
        counters::add_flops(flops);
        Ok(Self { lu, perm, norm1 })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<()> {
        let n = self.dim();
        check_len("LuFactor::solve", n, b.len())?;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for k in 0..n {
            let xk = x[k];
            for i in k + 1..n {
                x[i] -= self.lu[(i, k)] * xk;
            }
        }
        for k in (0..n).rev() {
            x[k] /= self.lu[(k, k)];
            let xk = x[k];
            for i in 0..k {
                x[i] -= self.lu[(i, k)] * xk;
            }
        }
        counters::add_flops(2 * n * n);
        b.copy_from_slice(&x);
        Ok(())
    }

    /// Solves `Aᵀ x = b` in place.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) -> Result<()> {
        let n = self.dim();
        check_len("LuFactor::solve_transpose", n, b.len())?;
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ w = b, then Lᵀ u = w, then x = Pᵀ u.
        let mut w = b.to_vec();
        for k in 0..n {
            let s: f64 = (0..k).map(|i| self.lu[(i, k)] * w[i]).sum();
            w[k] = (w[k] - s) / self.lu[(k, k)];
        }
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|i| self.lu[(i, k)] * w[i]).sum();
            w[k] -= s;
        }
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = w[k];
        }
        counters::add_flops(2 * n * n);
        Ok(())
    }

    /// Solves `A X = B` column by column.
    pub fn solve_block(&self, rhs: &DenseBlock) -> Result<DenseBlock> {
        let mut out = rhs.clone();
        let n = out.rows;
        for j in 0..out.cols {
            self.solve_in_place(&mut out.data[j * n..(j + 1) * n])?;
        }
        Ok(out)
    }

    /// Computes `B A⁻¹` through `A⁻ᵀ Bᵀ`, one row of `B` at a time.
    pub fn right_solve_block(&self, lhs: &DenseBlock) -> Result<DenseBlock> {
        check_len("LuFactor::right_solve_block", self.dim(), lhs.cols)?;
        let mut out = DenseBlock::zeros(lhs.rows, lhs.cols);
        let mut row = vec![0.0; lhs.cols];
        for i in 0..lhs.rows {
            for (j, r) in row.iter_mut().enumerate() {
                *r = lhs[(i, j)];
            }
            self.solve_transpose_in_place(&mut row)?;
            for (j, r) in row.iter().enumerate() {
                out[(i, j)] = *r;
            }
        }
        Ok(out)
    }

    /// Multiplies the factors back out: returns `A`.
    pub fn reconstruct(&self) -> DenseBlock {
        let n = self.dim();
        let lu_prod = DenseBlock::from_fn(n, n, |i, j| {
            (0..=i.min(j))
                .map(|k| {
                    let l = if k == i { 1.0 } else { self.lu[(i, k)] };
                    l * self.lu[(k, j)]
                })
                .sum()
        });
        let mut a = DenseBlock::zeros(n, n);
        for (k, &p) in self.perm.iter().enumerate() {
            for j in 0..n {
                a[(p, j)] = lu_prod[(k, j)];
            }
        }
        a
    }

    /// 1-norm condition number `‖A‖₁ ‖A⁻¹‖₁`, with `‖A⁻¹‖₁` computed exactly
    /// from the factorization.
    pub fn condition_1(&self) -> f64 {
        let n = self.dim();
        let mut inv_norm = 0.0_f64;
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            if self.solve_in_place(&mut e).is_err() {
                return f64::INFINITY;
            }
            inv_norm = inv_norm.max(e.iter().map(|v| v.abs()).sum());
        }
        self.norm1 * inv_norm
    }
}

/// Dense solve `A x = b` with partial pivoting.
pub fn dense_solve(a: &DenseBlock, b: &[f64]) -> Result<Vec<f64>> {
    let lu = LuFactor::factor(a, 0.0).map_err(|f| Error::SingularMatrix(f.column))?;
    let mut x = b.to_vec();
    lu.solve_in_place(&mut x)?;
    Ok(x)
}
