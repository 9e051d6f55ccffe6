use std::collections::BTreeMap;

use super::{offsets, DenseBlock, LuFactor};
use crate::counters;
use crate::error::{check_len, Error, Result};

/// Block-diagonal matrix with blocks of arbitrary (possibly non-square) shapes.
#[derive(Debug, Clone)]
pub struct BlockDiagonal {
    blocks: Vec<DenseBlock>,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
}

impl BlockDiagonal {
    pub fn new(blocks: Vec<DenseBlock>) -> Self {
        let rows: Vec<usize> = blocks.iter().map(DenseBlock::rows).collect();
        let cols: Vec<usize> = blocks.iter().map(DenseBlock::cols).collect();
        Self {
            row_offsets: offsets(&rows),
            col_offsets: offsets(&cols),
            blocks,
        }
    }

    pub fn blocks(&self) -> &[DenseBlock] {
        &self.blocks
    }

    pub fn block(&self, l: usize) -> &DenseBlock {
        &self.blocks[l]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn total_rows(&self) -> usize {
        *self.row_offsets.last().unwrap()
    }

    pub fn total_cols(&self) -> usize {
        *self.col_offsets.last().unwrap()
    }

    pub fn row_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(DenseBlock::rows).collect()
    }

    pub fn col_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(DenseBlock::cols).collect()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_offsets(&self) -> &[usize] {
        &self.col_offsets
    }

    /// `out += alpha * A v`.
    pub fn gemv_acc(&self, alpha: f64, v: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("BlockDiagonal::gemv input", self.total_cols(), v.len())?;
        check_len("BlockDiagonal::gemv output", self.total_rows(), out.len())?;
        for (l, b) in self.blocks.iter().enumerate() {
            b.gemv_acc(
                alpha,
                &v[self.col_offsets[l]..self.col_offsets[l + 1]],
                &mut out[self.row_offsets[l]..self.row_offsets[l + 1]],
            )?;
        }
        Ok(())
    }

    /// `out += alpha * Aᵀ v`.
    pub fn gemv_t_acc(&self, alpha: f64, v: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("BlockDiagonal::gemv_t input", self.total_rows(), v.len())?;
        check_len("BlockDiagonal::gemv_t output", self.total_cols(), out.len())?;
        for (l, b) in self.blocks.iter().enumerate() {
            b.gemv_t_acc(
                alpha,
                &v[self.row_offsets[l]..self.row_offsets[l + 1]],
                &mut out[self.col_offsets[l]..self.col_offsets[l + 1]],
            )?;
        }
        Ok(())
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.total_rows()];
        self.gemv_acc(1.0, v, &mut out)?;
        Ok(out)
    }

    pub fn matvec_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.total_cols()];
        self.gemv_t_acc(1.0, v, &mut out)?;
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseBlock {
        let mut out = DenseBlock::zeros(self.total_rows(), self.total_cols());
        for (l, b) in self.blocks.iter().enumerate() {
            out.set_block(self.row_offsets[l], self.col_offsets[l], b)
                .expect("offsets are consistent");
        }
        out
    }
}

/// Block lower-bidiagonal matrix with square diagonal blocks of side `a_l` and
/// subdiagonal blocks of shape `a_{l+1} × a_l`.
#[derive(Debug, Clone)]
pub struct BlockLowerBidiagonal {
    diag: Vec<DenseBlock>,
    sub: Vec<DenseBlock>,
    diag_lu: Option<Vec<LuFactor>>,
    offsets: Vec<usize>,
}

impl BlockLowerBidiagonal {
    pub fn new(diag: Vec<DenseBlock>, sub: Vec<DenseBlock>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::InvalidPipeline(
                "empty block bidiagonal matrix".into(),
            ));
        }
        check_len(
            "BlockLowerBidiagonal subdiagonal count",
            diag.len() - 1,
            sub.len(),
        )?;
        for d in &diag {
            check_len("BlockLowerBidiagonal diagonal block", d.rows(), d.cols())?;
        }
        for (l, s) in sub.iter().enumerate() {
            check_len(
                "BlockLowerBidiagonal subdiagonal rows",
                diag[l + 1].rows(),
                s.rows(),
            )?;
            check_len(
                "BlockLowerBidiagonal subdiagonal cols",
                diag[l].rows(),
                s.cols(),
            )?;
        }
        let unit = diag.iter().all(|d| *d == DenseBlock::identity(d.rows()));
        let diag_lu = if unit {
            None
        } else {
            Some(
                diag.iter()
                    .map(|d| LuFactor::factor(d, 0.0))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|f| Error::SingularMatrix(f.column))?,
            )
        };
        let dims: Vec<usize> = diag.iter().map(DenseBlock::rows).collect();
        Ok(Self {
            offsets: offsets(&dims),
            diag,
            sub,
            diag_lu,
        })
    }

    /// Identity diagonal blocks with the given subdiagonal blocks.
    pub fn unit(sub: Vec<DenseBlock>, dims: &[usize]) -> Result<Self> {
        let diag = dims.iter().map(|&d| DenseBlock::identity(d)).collect();
        Self::new(diag, sub)
    }

    pub fn has_unit_diagonal(&self) -> bool {
        self.diag_lu.is_none()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.diag.iter().map(DenseBlock::rows).collect()
    }

    pub fn diagonal_blocks(&self) -> &[DenseBlock] {
        &self.diag
    }

    pub fn subdiagonal_blocks(&self) -> &[DenseBlock] {
        &self.sub
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn seg<'a>(&self, v: &'a [f64], l: usize) -> &'a [f64] {
        &v[self.offsets[l]..self.offsets[l + 1]]
    }

    /// Forward substitution for `M u = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut u = rhs.to_vec();
        self.solve_in_place(&mut u)?;
        Ok(u)
    }

    pub fn solve_in_place(&self, u: &mut [f64]) -> Result<()> {
        check_len("BlockLowerBidiagonal::solve", self.dim(), u.len())?;
        for l in 0..self.diag.len() {
            let (done, rest) = u.split_at_mut(self.offsets[l]);
            let cur = &mut rest[..self.offsets[l + 1] - self.offsets[l]];
            if l > 0 {
                self.sub[l - 1].gemv_acc(-1.0, &done[self.offsets[l - 1]..], cur)?;
            }
            if let Some(lu) = &self.diag_lu {
                lu[l].solve_in_place(cur)?;
            }
        }
        Ok(())
    }

    /// Backward substitution for `Mᵀ u = rhs`.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut u = rhs.to_vec();
        self.solve_transpose_in_place(&mut u)?;
        Ok(u)
    }

    pub fn solve_transpose_in_place(&self, u: &mut [f64]) -> Result<()> {
        check_len("BlockLowerBidiagonal::solve_transpose", self.dim(), u.len())?;
        for l in (0..self.diag.len()).rev() {
            let (head, tail) = u.split_at_mut(self.offsets[l + 1]);
            let cur = &mut head[self.offsets[l]..];
            if l + 1 < self.diag.len() {
                let next = &tail[..self.offsets[l + 2] - self.offsets[l + 1]];
                self.sub[l].gemv_t_acc(-1.0, next, cur)?;
            }
            if let Some(lu) = &self.diag_lu {
                lu[l].solve_transpose_in_place(cur)?;
            }
        }
        Ok(())
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("BlockLowerBidiagonal::matvec", self.dim(), v.len())?;
        let mut out = vec![0.0; self.dim()];
        for l in 0..self.diag.len() {
            let o = &mut out[self.offsets[l]..self.offsets[l + 1]];
            self.diag[l].gemv_acc(1.0, self.seg(v, l), o)?;
            if l > 0 {
                self.sub[l - 1].gemv_acc(1.0, self.seg(v, l - 1), o)?;
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseBlock {
        let n = self.dim();
        let mut out = DenseBlock::zeros(n, n);
        for (l, d) in self.diag.iter().enumerate() {
            out.set_block(self.offsets[l], self.offsets[l], d).unwrap();
            if l > 0 {
                out.set_block(self.offsets[l], self.offsets[l - 1], &self.sub[l - 1])
                    .unwrap();
            }
        }
        out
    }
}

/// The downshift `P`: maps stacked `(v_1, .., v_L)` with dims `(a_1, .., a_L)`
/// to `(0, v_1, .., v_{L-1})` with dims `(a_0, .., a_{L-1})`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftOperator {
    dims: Vec<usize>,
}

impl ShiftOperator {
    /// `dims` holds `a_0, .., a_L` (one more entry than the number of layers).
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidPipeline(
                "shift operator needs at least one layer".into(),
            ));
        }
        Ok(Self { dims })
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[1..].iter().sum()
    }

    pub fn output_dim(&self) -> usize {
        self.dims[..self.dims.len() - 1].iter().sum()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("ShiftOperator::apply input", self.input_dim(), v.len())?;
        check_len("ShiftOperator::apply output", self.output_dim(), out.len())?;
        let keep = self.input_dim() - self.dims[self.layers()];
        out[..self.dims[0]].iter_mut().for_each(|o| *o = 0.0);
        out[self.dims[0]..].copy_from_slice(&v[..keep]);
        Ok(())
    }

    /// `Pᵀ`: maps `(u_0, .., u_{L-1})` to `(u_1, .., u_{L-1}, 0)`.
    pub fn apply_transpose(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.input_dim()];
        self.apply_transpose_into(u, &mut out)?;
        Ok(out)
    }

    pub fn apply_transpose_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(
            "ShiftOperator::apply_transpose input",
            self.output_dim(),
            u.len(),
        )?;
        check_len(
            "ShiftOperator::apply_transpose output",
            self.input_dim(),
            out.len(),
        )?;
        let keep = self.output_dim() - self.dims[0];
        out[..keep].copy_from_slice(&u[self.dims[0]..]);
        out[keep..].iter_mut().for_each(|o| *o = 0.0);
        Ok(())
    }

    pub fn to_dense(&self) -> DenseBlock {
        let mut out = DenseBlock::zeros(self.output_dim(), self.input_dim());
        let keep = self.input_dim() - self.dims[self.layers()];
        for k in 0..keep {
            out[(self.dims[0] + k, k)] = 1.0;
        }
        out
    }
}

/// Block diagonal of Kronecker blocks `I_k ⊗ b` where `b` is a row vector of
/// length `m`. Block `l` has shape `k_l × (m_l k_l)` and acts on `vec(W)` of an
/// `m_l × k_l` matrix as `vec(b W) = Wᵀ bᵀ`; the Kronecker product is never formed.
#[derive(Debug, Clone)]
pub struct KronIdentityDiagonal {
    rows: Vec<Vec<f64>>,
    inner: Vec<usize>,
}

impl KronIdentityDiagonal {
    pub fn new(rows: Vec<Vec<f64>>, inner: Vec<usize>) -> Result<Self> {
        check_len("KronIdentityDiagonal", rows.len(), inner.len())?;
        Ok(Self { rows, inner })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.rows[l]
    }

    pub fn block_shape(&self, l: usize) -> (usize, usize) {
        (self.inner[l], self.inner[l] * self.rows[l].len())
    }

    /// Applies block `l`: `out[q] = Σ_i b[i] w[i + m q]`.
    pub fn apply_block(&self, l: usize, w: &[f64], out: &mut [f64]) -> Result<()> {
        let b = &self.rows[l];
        let m = b.len();
        check_len(
            "KronIdentityDiagonal::apply_block input",
            m * self.inner[l],
            w.len(),
        )?;
        check_len(
            "KronIdentityDiagonal::apply_block output",
            self.inner[l],
            out.len(),
        )?;
        counters::add_flops(2 * w.len());
        for (q, o) in out.iter_mut().enumerate() {
            *o = b
                .iter()
                .zip(&w[q * m..(q + 1) * m])
                .map(|(x, y)| x * y)
                .sum();
        }
        Ok(())
    }

    /// Contracts a derivative block whose rows are indexed by `(i, q)` with
    /// `i` fastest (the output index, of length `m`): returns the
    /// `k × cols` block `(I_k ⊗ b) A`.
    pub fn contract(&self, l: usize, a: &DenseBlock) -> Result<DenseBlock> {
        let (k, n) = self.block_shape(l);
        check_len("KronIdentityDiagonal::contract", n, a.rows())?;
        let mut out = DenseBlock::zeros(k, a.cols());
        let mut col = vec![0.0; k];
        for c in 0..a.cols() {
            self.apply_block(l, a.column(c), &mut col)?;
            for (q, v) in col.iter().enumerate() {
                out[(q, c)] = *v;
            }
        }
        Ok(out)
    }

    /// Dense `I_k ⊗ b` block; only for oracles on small shapes.
    pub fn dense_block(&self, l: usize) -> DenseBlock {
        let (k, n) = self.block_shape(l);
        let b = &self.rows[l];
        let m = b.len();
        DenseBlock::from_fn(k, n, |q, c| if c / m == q { b[c % m] } else { 0.0 })
    }

    pub fn to_dense(&self) -> DenseBlock {
        BlockDiagonal::new((0..self.len()).map(|l| self.dense_block(l)).collect()).to_dense()
    }
}

/// Block-sparse matrix over a layer index: `blocks[(i, j)]` has shape
/// `row_dims[i] × col_dims[j]`; absent blocks are zero.
#[derive(Debug, Clone)]
pub struct BlockSparse {
    row_dims: Vec<usize>,
    col_dims: Vec<usize>,
    blocks: BTreeMap<(usize, usize), DenseBlock>,
}

impl BlockSparse {
    pub fn zeros(row_dims: Vec<usize>, col_dims: Vec<usize>) -> Self {
        Self {
            row_dims,
            col_dims,
            blocks: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, i: usize, j: usize, block: DenseBlock) -> Result<()> {
        check_len("BlockSparse::insert rows", self.row_dims[i], block.rows())?;
        check_len("BlockSparse::insert cols", self.col_dims[j], block.cols())?;
        self.blocks.insert((i, j), block);
        Ok(())
    }

    pub fn row_dims(&self) -> &[usize] {
        &self.row_dims
    }

    pub fn col_dims(&self) -> &[usize] {
        &self.col_dims
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&DenseBlock> {
        self.blocks.get(&(i, j))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &DenseBlock)> {
        self.blocks.iter()
    }

    pub fn total_rows(&self) -> usize {
        self.row_dims.iter().sum()
    }

    pub fn total_cols(&self) -> usize {
        self.col_dims.iter().sum()
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("BlockSparse::matvec", self.total_cols(), v.len())?;
        let ro = offsets(&self.row_dims);
        let co = offsets(&self.col_dims);
        let mut out = vec![0.0; self.total_rows()];
        for (&(i, j), b) in &self.blocks {
            b.gemv_acc(1.0, &v[co[j]..co[j + 1]], &mut out[ro[i]..ro[i + 1]])?;
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseBlock {
        let ro = offsets(&self.row_dims);
        let co = offsets(&self.col_dims);
        let mut out = DenseBlock::zeros(self.total_rows(), self.total_cols());
        for (&(i, j), b) in &self.blocks {
            out.set_block(ro[i], co[j], b).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_diag_identity_and_scaling() {
        let a = BlockDiagonal::new(vec![DenseBlock::identity(2), DenseBlock::identity(3)]);
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(a.matvec(&v).unwrap(), v.to_vec());
        let s = BlockDiagonal::new(vec![DenseBlock::diagonal(&[2.0])]);
        assert_eq!(s.matvec(&[3.0]).unwrap(), vec![6.0]);
        assert!(matches!(
            s.matvec(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bidiag_two_block_substitution() {
        let g = DenseBlock::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]]).unwrap();
        let mut neg_g = g.clone();
        neg_g.scale(-1.0);
        let m = BlockLowerBidiagonal::unit(vec![neg_g], &[2, 2]).unwrap();
        assert!(m.has_unit_diagonal());
        let r = [1.0, 3.0, 4.0, 5.0];
        let gr1 = g.matvec(&r[..2]).unwrap();
        assert_eq!(
            m.solve(&r).unwrap(),
            vec![1.0, 3.0, 4.0 + gr1[0], 5.0 + gr1[1]]
        );
        let gtr2 = g.matvec_t(&r[2..]).unwrap();
        assert_eq!(
            m.solve_transpose(&r).unwrap(),
            vec![1.0 + gtr2[0], 3.0 + gtr2[1], 4.0, 5.0]
        );
    }

    #[test]
    fn bidiag_identity_solve_is_identity() {
        let m = BlockLowerBidiagonal::unit(
            vec![DenseBlock::zeros(1, 2), DenseBlock::zeros(3, 1)],
            &[2, 1, 3],
        )
        .unwrap();
        let r = [1.0, -2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(m.solve(&r).unwrap(), r.to_vec());
        assert_eq!(m.solve_transpose(&r).unwrap(), r.to_vec());
    }

    #[test]
    fn shift_examples() {
        let p = ShiftOperator::new(vec![1, 1, 1, 1]).unwrap();
        let once = p.apply(&[7.0, 8.0, 9.0]).unwrap();
        assert_eq!(once, vec![0.0, 7.0, 8.0]);
        assert_eq!(p.apply(&once).unwrap(), vec![0.0, 0.0, 7.0]);
        assert_eq!(p.apply_transpose(&once).unwrap(), vec![7.0, 8.0, 0.0]);
    }

    #[test]
    fn shift_heterogeneous_matches_dense() {
        let p = ShiftOperator::new(vec![3, 2, 4, 1]).unwrap();
        let v: Vec<f64> = (1..=7).map(f64::from).collect();
        let d = p.to_dense();
        assert_eq!(p.apply(&v).unwrap(), d.matvec(&v).unwrap());
        let u: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(p.apply_transpose(&u).unwrap(), d.matvec_t(&u).unwrap());
        assert_eq!(
            p.apply(&v).unwrap(),
            vec![0., 0., 0., 1., 2., 3., 4., 5., 6.]
        );
    }

    #[test]
    fn kron_block_matches_dense() {
        let k = KronIdentityDiagonal::new(vec![vec![1.0, -2.0, 0.5]], vec![2]).unwrap();
        let w: Vec<f64> = (0..6).map(|i| i as f64 + 1.0).collect();
        let mut out = vec![0.0; 2];
        k.apply_block(0, &w, &mut out).unwrap();
        assert_eq!(out, k.dense_block(0).matvec(&w).unwrap());
        assert_eq!(out, vec![1.0 - 4.0 + 1.5, 4.0 - 10.0 + 3.0]);
    }
}
