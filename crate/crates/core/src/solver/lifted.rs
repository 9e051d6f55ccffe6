use crate::blockmat::{
    pivot_to_tridiagonal, BlockSparse, BlockTridiagonal, CommutationPermutation, DenseBlock,
};
use crate::error::{check_len, Error, Result};
use crate::hessian::HessianOperator;

/// Group indices of the lifted unknowns.
pub const GROUP_PARAMS: usize = 0;
pub const GROUP_TANGENT: usize = 1;
pub const GROUP_ADJOINT: usize = 2;

/// The sparse augmented system over `(x, y, z)` whose Schur complement on the
/// `x` block is `H + εI`.
///
/// Row 1 carries the damped curvature, row 2 encodes `M y = D_x x` and row 3
/// encodes `Mᵀ z = Pᵀ D_M (D_xz x + D_zz P y)`. Every block is banded over the
/// layer index, so the commutation `Π` turns it block-tridiagonal.
#[derive(Debug, Clone)]
pub struct LiftedSystem {
    grid: Vec<Vec<BlockSparse>>,
    rhs: Vec<f64>,
    pi: CommutationPermutation,
    eps: f64,
}

/// Builds the lifted system for `(H + εI) x = g`.
pub fn lift(op: &HessianOperator, eps: f64, g: &[f64]) -> Result<LiftedSystem> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidPipeline(format!(
            "damping must be finite and non-negative, got {eps}"
        )));
    }
    check_len("lift right-hand side", op.dim(), g.len())?;
    let n = op.layers();
    let p: Vec<usize> = op.param_dims().to_vec();
    let a: Vec<usize> = op.activation_dims()[1..].to_vec();
    let groups = [p.clone(), a.clone(), a.clone()];
    let empty = |i: usize, j: usize| BlockSparse::zeros(groups[i].clone(), groups[j].clone());
    let mut grid: Vec<Vec<BlockSparse>> = (0..3)
        .map(|i| (0..3).map(|j| empty(i, j)).collect())
        .collect();

    let kx = op.kron_params();
    let kz = op.kron_inputs();
    for l in 0..n {
        let mut curv = kx.contract(l, op.hess_xx().block(l))?;
        curv.shift_diagonal(eps);
        grid[0][0].insert(l, l, curv)?;
        if l > 0 {
            grid[0][1].insert(l, l - 1, kx.contract(l, op.hess_zx().block(l))?)?;
        }
        grid[0][2].insert(l, l, op.jac_x().block(l).transpose())?;

        let mut neg_jx = op.jac_x().block(l).clone();
        neg_jx.scale(-1.0);
        grid[1][0].insert(l, l, neg_jx)?;
        grid[1][1].insert(l, l, DenseBlock::identity(a[l]))?;
        grid[2][2].insert(l, l, DenseBlock::identity(a[l]))?;
        if l > 0 {
            let mut neg_jz = op.jac_z().block(l).clone();
            neg_jz.scale(-1.0);
            grid[2][2].insert(l - 1, l, neg_jz.transpose())?;
            grid[1][1].insert(l, l - 1, neg_jz)?;

            let mut xz = kz.contract(l, op.hess_xz().block(l))?;
            xz.scale(-1.0);
            grid[2][0].insert(l - 1, l, xz)?;
            let mut zz = kz.contract(l, op.hess_zz().block(l))?;
            zz.scale(-1.0);
            grid[2][1].insert(l - 1, l - 1, zz)?;
        }
    }

    let pi = CommutationPermutation::new(groups.to_vec())?;
    let mut rhs = g.to_vec();
    rhs.resize(pi.len(), 0.0);
    Ok(LiftedSystem { grid, rhs, pi, eps })
}

impl LiftedSystem {
    /// The 3 × 3 grid of layer-indexed blocks.
    pub fn grid(&self) -> &[Vec<BlockSparse>] {
        &self.grid
    }

    /// Right-hand side `(g, 0, 0)` in group-major order.
    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn permutation(&self) -> &CommutationPermutation {
        &self.pi
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Total unknowns `Σp + 2Σa`.
    pub fn dim(&self) -> usize {
        self.pi.len()
    }

    /// Sizes of the `x`, `y` and `z` groups.
    pub fn group_dims(&self) -> Vec<usize> {
        self.pi.group_dims()
    }

    /// The permuted block-tridiagonal matrix `Π K Πᵀ`.
    pub fn pivot(&self) -> Result<BlockTridiagonal> {
        pivot_to_tridiagonal(&self.grid, &self.pi)
    }

    /// Dense `K` in group-major order; for small-dimension oracles only.
    pub fn to_dense(&self) -> DenseBlock {
        let gd = self.group_dims();
        let n = self.dim();
        let mut out = DenseBlock::zeros(n, n);
        let mut row = 0;
        for (i, grid_row) in self.grid.iter().enumerate() {
            let mut col = 0;
            for (j, block) in grid_row.iter().enumerate() {
                out.set_block(row, col, &block.to_dense()).unwrap();
                col += gd[j];
            }
            row += gd[i];
        }
        out
    }

    /// `K v` without densifying, in group-major order.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("LiftedSystem::matvec", self.dim(), v.len())?;
        let gd = self.group_dims();
        let off = crate::blockmat::offsets(&gd);
        let mut out = vec![0.0; self.dim()];
        for (i, grid_row) in self.grid.iter().enumerate() {
            for (j, block) in grid_row.iter().enumerate() {
                let part = block.matvec(&v[off[j]..off[j + 1]])?;
                for (o, x) in out[off[i]..off[i + 1]].iter_mut().zip(part) {
                    *o += x;
                }
            }
        }
        Ok(out)
    }
}

/// Undoes the layer-major ordering of a lifted solution and returns its
/// parameter block.
pub fn unpivot_extract(x_prime: &[f64], pi: &CommutationPermutation) -> Result<Vec<f64>> {
    pi.extract_group(x_prime, GROUP_PARAMS)
}
