use super::{offsets, BlockSparse, CommutationPermutation, DenseBlock, LuFactor};
use crate::error::{check_len, Error, Result};

/// Pivots below this fraction of a block's largest entry are treated as zero.
pub const DEFAULT_PIVOT_TOLERANCE: f64 = 1e-12;

/// Block-tridiagonal matrix with square diagonal blocks of side `d_i`,
/// `lower[i]` of shape `d_{i+1} × d_i` and `upper[i]` of shape `d_i × d_{i+1}`.
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    diag: Vec<DenseBlock>,
    lower: Vec<DenseBlock>,
    upper: Vec<DenseBlock>,
}

impl BlockTridiagonal {
    pub fn new(
        diag: Vec<DenseBlock>,
        lower: Vec<DenseBlock>,
        upper: Vec<DenseBlock>,
    ) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::InvalidPipeline(
                "empty block-tridiagonal matrix".into(),
            ));
        }
        let n = diag.len();
        check_len("BlockTridiagonal lower count", n - 1, lower.len())?;
        check_len("BlockTridiagonal upper count", n - 1, upper.len())?;
        for d in &diag {
            check_len("BlockTridiagonal diagonal block", d.rows(), d.cols())?;
        }
        for i in 0..n - 1 {
            check_len(
                "BlockTridiagonal lower rows",
                diag[i + 1].rows(),
                lower[i].rows(),
            )?;
            check_len(
                "BlockTridiagonal lower cols",
                diag[i].rows(),
                lower[i].cols(),
            )?;
            check_len(
                "BlockTridiagonal upper rows",
                diag[i].rows(),
                upper[i].rows(),
            )?;
            check_len(
                "BlockTridiagonal upper cols",
                diag[i + 1].rows(),
                upper[i].cols(),
            )?;
        }
        Ok(Self { diag, lower, upper })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.diag.iter().map(DenseBlock::rows).collect()
    }

    pub fn dim(&self) -> usize {
        self.dims().iter().sum()
    }

    pub fn diag(&self) -> &[DenseBlock] {
        &self.diag
    }

    pub fn lower(&self) -> &[DenseBlock] {
        &self.lower
    }

    pub fn upper(&self) -> &[DenseBlock] {
        &self.upper
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let off = offsets(&self.dims());
        check_len("BlockTridiagonal::matvec", off[self.len()], v.len())?;
        let mut out = vec![0.0; v.len()];
        for i in 0..self.len() {
            let o = &mut out[off[i]..off[i + 1]];
            self.diag[i].gemv_acc(1.0, &v[off[i]..off[i + 1]], o)?;
            if i > 0 {
                self.lower[i - 1].gemv_acc(1.0, &v[off[i - 1]..off[i]], o)?;
            }
            if i + 1 < self.len() {
                self.upper[i].gemv_acc(1.0, &v[off[i + 1]..off[i + 2]], o)?;
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseBlock {
        let off = offsets(&self.dims());
        let n = off[self.len()];
        let mut out = DenseBlock::zeros(n, n);
        for i in 0..self.len() {
            out.set_block(off[i], off[i], &self.diag[i]).unwrap();
            if i + 1 < self.len() {
                out.set_block(off[i + 1], off[i], &self.lower[i]).unwrap();
                out.set_block(off[i], off[i + 1], &self.upper[i]).unwrap();
            }
        }
        out
    }

    /// Block LDU factorization by the Schur-complement recursion
    /// `S_1 = B_11`, `lower_i = B_{i,i-1} S_{i-1}⁻¹`, `S_i = B_ii - lower_i B_{i-1,i}`.
    ///
    /// `S⁻¹` is never formed: each `S_i` is LU-factored with row pivoting and
    /// the factors are applied through solves. Fails with
    /// [`Error::SingularPivotBlock`] when a pivot of `S_i` falls at or below
    /// `pivot_tolerance × max|S_i|`.
    pub fn factorize(&self, pivot_tolerance: f64) -> Result<LduFactorization> {
        let n = self.len();
        let mut pivots: Vec<LuFactor> = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n - 1);
        let mut upper = Vec::with_capacity(n - 1);
        let singular = |block: usize| {
            move |f: super::PivotFailure| Error::SingularPivotBlock {
                block,
                pivot: f.pivot,
                threshold: f.threshold,
            }
        };
        let first = LuFactor::factor(&self.diag[0], pivot_tolerance).map_err(singular(0))?;
        pivots.push(first);
        for i in 1..n {
            let prev = &pivots[i - 1];
            let li = prev.right_solve_block(&self.lower[i - 1])?;
            let mut schur = self.diag[i].clone();
            schur.add_scaled(-1.0, &li.matmul(&self.upper[i - 1])?)?;
            if !schur.is_finite() {
                return Err(Error::NonFinite("block LDU Schur complement"));
            }
            upper.push(prev.solve_block(&self.upper[i - 1])?);
            lower.push(li);
            pivots.push(LuFactor::factor(&schur, pivot_tolerance).map_err(singular(i))?);
        }
        Ok(LduFactorization {
            lower,
            pivots,
            upper,
        })
    }
}

/// `T = L D U` with unit block lower-bidiagonal `L` (subdiagonal blocks
/// `lower`), block-diagonal `D` (the LU-factored Schur complements) and unit
/// block upper-bidiagonal `U` (superdiagonal blocks `upper = S_i⁻¹ B_{i,i+1}`).
#[derive(Debug, Clone)]
pub struct LduFactorization {
    lower: Vec<DenseBlock>,
    pivots: Vec<LuFactor>,
    upper: Vec<DenseBlock>,
}

impl LduFactorization {
    pub fn len(&self) -> usize {
        self.pivots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pivots.is_empty()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.pivots.iter().map(LuFactor::dim).collect()
    }

    pub fn lower_subdiag(&self) -> &[DenseBlock] {
        &self.lower
    }

    pub fn upper_superdiag(&self) -> &[DenseBlock] {
        &self.upper
    }

    pub fn pivot_blocks(&self) -> &[LuFactor] {
        &self.pivots
    }

    /// 1-norm condition number of every pivot block.
    pub fn pivot_conditions(&self) -> Vec<f64> {
        self.pivots.iter().map(LuFactor::condition_1).collect()
    }

    /// Solves `T w = rhs`: forward substitution through `L`, then backward
    /// substitution through `D U`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let off = offsets(&self.dims());
        let n = self.len();
        check_len("LduFactorization::solve", off[n], rhs.len())?;
        let mut w = rhs.to_vec();
        for i in 1..n {
            let (done, rest) = w.split_at_mut(off[i]);
            self.lower[i - 1].gemv_acc(
                -1.0,
                &done[off[i - 1]..],
                &mut rest[..off[i + 1] - off[i]],
            )?;
        }
        for i in (0..n).rev() {
            let (head, tail) = w.split_at_mut(off[i + 1]);
            let cur = &mut head[off[i]..];
            self.pivots[i].solve_in_place(cur)?;
            if i + 1 < n {
                self.upper[i].gemv_acc(-1.0, &tail[..off[i + 2] - off[i + 1]], cur)?;
            }
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("block LDU solve"));
        }
        Ok(w)
    }

    /// Dense `(L, D, U)` factors, for checking the reconstruction `L D U = T`.
    pub fn dense_factors(&self) -> (DenseBlock, DenseBlock, DenseBlock) {
        let dims = self.dims();
        let off = offsets(&dims);
        let n = off[self.len()];
        let mut l = DenseBlock::identity(n);
        let mut d = DenseBlock::zeros(n, n);
        let mut u = DenseBlock::identity(n);
        for i in 0..self.len() {
            d.set_block(off[i], off[i], &self.pivots[i].reconstruct())
                .unwrap();
            if i + 1 < self.len() {
                l.set_block(off[i + 1], off[i], &self.lower[i]).unwrap();
                u.set_block(off[i], off[i + 1], &self.upper[i]).unwrap();
            }
        }
        (l, d, u)
    }
}

/// Gathers a `G × G` grid of layer-indexed blocks `K_ij` into the permuted
/// matrix `K' = Π K Πᵀ`, whose layer block `(u, v)` is the `G × G` gather of
/// sub-blocks `K_{ij,uv}`.
///
/// Every grid block must be layer-banded with bandwidth one; a nonzero
/// sub-block with `|u - v| > 1` is reported as [`Error::OutsideEnvelope`].
pub fn pivot_to_tridiagonal(
    grid: &[Vec<BlockSparse>],
    pi: &CommutationPermutation,
) -> Result<BlockTridiagonal> {
    let g = pi.groups();
    let layers = pi.layers();
    check_len("pivot_to_tridiagonal grid rows", g, grid.len())?;
    for (i, row) in grid.iter().enumerate() {
        check_len("pivot_to_tridiagonal grid cols", g, row.len())?;
        for (j, k) in row.iter().enumerate() {
            if k.row_dims() != pi.dims()[i].as_slice() || k.col_dims() != pi.dims()[j].as_slice() {
                return Err(Error::DimensionMismatch {
                    context: "pivot_to_tridiagonal block dims",
                    expected: pi.group_dims()[i] * pi.group_dims()[j],
                    actual: k.total_rows() * k.total_cols(),
                });
            }
        }
    }
    let layer_dims = pi.layer_dims();
    // Offset of group i's sub-block inside layer u's block.
    let inner: Vec<Vec<usize>> = (0..layers)
        .map(|u| {
            let mut acc = 0;
            (0..g)
                .map(|i| {
                    let o = acc;
                    acc += pi.dims()[i][u];
                    o
                })
                .collect()
        })
        .collect();

    let mut diag: Vec<DenseBlock> = layer_dims
        .iter()
        .map(|&d| DenseBlock::zeros(d, d))
        .collect();
    let mut lower: Vec<DenseBlock> = (1..layers)
        .map(|u| DenseBlock::zeros(layer_dims[u], layer_dims[u - 1]))
        .collect();
    let mut upper: Vec<DenseBlock> = (1..layers)
        .map(|u| DenseBlock::zeros(layer_dims[u - 1], layer_dims[u]))
        .collect();

    for (i, row) in grid.iter().enumerate() {
        for (j, k) in row.iter().enumerate() {
            for (&(u, v), block) in k.iter() {
                let target = if u == v {
                    &mut diag[u]
                } else if u == v + 1 {
                    &mut lower[v]
                } else if v == u + 1 {
                    &mut upper[u]
                } else if block.is_zero() {
                    continue;
                } else {
                    return Err(Error::OutsideEnvelope { row: u, col: v });
                };
                target.set_block(inner[u][i], inner[v][j], block)?;
            }
        }
    }
    BlockTridiagonal::new(diag, lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DenseBlock {
        DenseBlock::diagonal(&[v])
    }

    #[test]
    fn identity_factorization() {
        let t = BlockTridiagonal::new(
            vec![DenseBlock::identity(2), DenseBlock::identity(3)],
            vec![DenseBlock::zeros(3, 2)],
            vec![DenseBlock::zeros(2, 3)],
        )
        .unwrap();
        let f = t.factorize(DEFAULT_PIVOT_TOLERANCE).unwrap();
        assert!(f.lower_subdiag()[0].is_zero());
        assert!(f.upper_superdiag()[0].is_zero());
        for p in f.pivot_blocks() {
            assert_eq!(p.reconstruct(), DenseBlock::identity(p.dim()));
        }
        let rhs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(f.solve(&rhs).unwrap(), rhs.to_vec());
    }

    #[test]
    fn scalar_two_block_recursion() {
        let t = BlockTridiagonal::new(
            vec![scalar(2.0), scalar(2.0)],
            vec![scalar(1.0)],
            vec![scalar(1.0)],
        )
        .unwrap();
        let f = t.factorize(DEFAULT_PIVOT_TOLERANCE).unwrap();
        assert_eq!(f.pivot_blocks()[0].reconstruct(), scalar(2.0));
        assert_eq!(f.lower_subdiag()[0], scalar(0.5));
        assert_eq!(f.pivot_blocks()[1].reconstruct(), scalar(1.5));
        // [[2, 1], [1, 2]] w = (3, 3) has w = (1, 1).
        let w = f.solve(&[3.0, 3.0]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-15 && (w[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singular_second_pivot() {
        let t = BlockTridiagonal::new(
            vec![scalar(1.0), scalar(1.0)],
            vec![scalar(1.0)],
            vec![scalar(1.0)],
        )
        .unwrap();
        match t.factorize(DEFAULT_PIVOT_TOLERANCE) {
            Err(Error::SingularPivotBlock { block, .. }) => assert_eq!(block, 1),
            other => panic!("expected singular pivot, got {other:?}"),
        }
    }

    #[test]
    fn envelope_violation_is_reported() {
        let pi = CommutationPermutation::new(vec![vec![1, 1, 1]]).unwrap();
        let mut k = BlockSparse::zeros(vec![1, 1, 1], vec![1, 1, 1]);
        k.insert(0, 2, scalar(3.0)).unwrap();
        let err = pivot_to_tridiagonal(&[vec![k.clone()]], &pi).unwrap_err();
        assert_eq!(err, Error::OutsideEnvelope { row: 0, col: 2 });
        // An explicitly stored zero block is harmless.
        let mut z = BlockSparse::zeros(vec![1, 1, 1], vec![1, 1, 1]);
        z.insert(0, 2, scalar(0.0)).unwrap();
        assert!(pivot_to_tridiagonal(&[vec![z]], &pi).is_ok());
    }

    /// 2 × 2 grid of 2 × 2 blocks `D_ij` over two layers of scalars, with
    /// diagonals `(d_ij, d'_ij)` and optional upper entries.
    fn two_by_two(diag: [[f64; 2]; 4], upper: Option<[f64; 4]>) -> Vec<Vec<BlockSparse>> {
        let mut grid = vec![vec![BlockSparse::zeros(vec![1, 1], vec![1, 1]); 2]; 2];
        for (k, d) in diag.iter().enumerate() {
            let block = &mut grid[k / 2][k % 2];
            block.insert(0, 0, scalar(d[0])).unwrap();
            block.insert(1, 1, scalar(d[1])).unwrap();
            if let Some(u) = upper {
                block.insert(0, 1, scalar(u[k])).unwrap();
            }
        }
        grid
    }

    #[test]
    fn diagonal_blocks_pivot_to_block_diagonal() {
        let (a, b, c, d, e, f, g, h) = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0);
        let grid = two_by_two([[a, b], [c, d], [e, f], [g, h]], None);
        let pi = CommutationPermutation::new(vec![vec![1, 1], vec![1, 1]]).unwrap();
        let t = pivot_to_tridiagonal(&grid, &pi).unwrap().to_dense();
        let expect = vec![
            vec![a, c, 0.0, 0.0],
            vec![e, g, 0.0, 0.0],
            vec![0.0, 0.0, b, d],
            vec![0.0, 0.0, f, h],
        ];
        assert_eq!(t.to_rows(), expect);
    }

    #[test]
    fn upper_entries_land_in_superdiagonal_block() {
        let (a, b, c, d, e, f, g, h) = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0);
        let (alpha, beta, delta, gamma) = (11.0, 12.0, 13.0, 14.0);
        let grid = two_by_two(
            [[a, b], [c, d], [e, f], [g, h]],
            Some([alpha, beta, delta, gamma]),
        );
        let pi = CommutationPermutation::new(vec![vec![1, 1], vec![1, 1]]).unwrap();
        let t = pivot_to_tridiagonal(&grid, &pi).unwrap().to_dense();
        let expect = vec![
            vec![a, c, alpha, beta],
            vec![e, g, delta, gamma],
            vec![0.0, 0.0, b, d],
            vec![0.0, 0.0, f, h],
        ];
        assert_eq!(t.to_rows(), expect);
    }

    #[test]
    fn identity_grid_pivots_to_identity() {
        let dims = vec![vec![2, 1], vec![1, 3], vec![1, 1]];
        let pi = CommutationPermutation::new(dims.clone()).unwrap();
        let grid: Vec<Vec<BlockSparse>> = (0..3)
            .map(|i| {
                (0..3)
                    .map(|j| {
                        let mut k = BlockSparse::zeros(dims[i].clone(), dims[j].clone());
                        if i == j {
                            for (l, &n) in dims[i].iter().enumerate() {
                                k.insert(l, l, DenseBlock::identity(n)).unwrap();
                            }
                        }
                        k
                    })
                    .collect()
            })
            .collect();
        let t = pivot_to_tridiagonal(&grid, &pi).unwrap();
        assert_eq!(t.to_dense(), DenseBlock::identity(pi.len()));
    }
}
