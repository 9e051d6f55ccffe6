//! Structured Hessian of a pipeline loss with respect to all parameters.
//!
//! With `D_x`, `D_xx`, .. the block diagonals of per-layer derivatives,
//! `M` the unit block lower-bidiagonal with subdiagonal `-∇_z f_l`, `P` the
//! downshift and `D_D`, `D_M` the Kronecker contractions against the
//! backprop vectors, the Hessian is
//!
//! `H = D_xᵀ M⁻ᵀ Pᵀ D_M (D_xz + D_zz P M⁻¹ D_x) + D_D (D_xx + D_zx P M⁻¹ D_x)`.
//!
//! Every product is applied block by block; the operator is never formed.

mod oracle;
mod pearlmutter;

pub use oracle::{dense_hessian, finite_diff_hessian, DENSE_SIZE_LIMIT};
pub use pearlmutter::hvp_pearlmutter;

use crate::blockmat::{
    offsets, BlockDiagonal, BlockLowerBidiagonal, DenseBlock, KronIdentityDiagonal, ShiftOperator,
};
use crate::error::{check_len, Result};
use crate::pipeline::{backprop_vectors, EvaluationPoint, Pipeline};

/// The Hessian operator at one evaluation point.
#[derive(Debug, Clone)]
pub struct HessianOperator {
    act_dims: Vec<usize>,
    param_dims: Vec<usize>,
    param_offsets: Vec<usize>,
    backprop: Vec<Vec<f64>>,
    gradient: Vec<f64>,
    jac_x: BlockDiagonal,
    jac_z: BlockDiagonal,
    hess_xx: BlockDiagonal,
    hess_zx: BlockDiagonal,
    hess_xz: BlockDiagonal,
    hess_zz: BlockDiagonal,
    m: BlockLowerBidiagonal,
    shift: ShiftOperator,
    kron_x: KronIdentityDiagonal,
    kron_z: KronIdentityDiagonal,
}

/// Scratch buffers reused across [`HessianOperator::hvp`] calls.
#[derive(Debug, Clone)]
pub struct HvpWorkspace {
    forward: Vec<f64>,
    shifted: Vec<f64>,
    back: Vec<f64>,
    pulled: Vec<f64>,
    tmp_x: Vec<f64>,
    tmp_z: Vec<f64>,
}

impl HessianOperator {
    /// Collects per-layer derivatives and backprop vectors at `pt`.
    pub fn assemble(p: &Pipeline, pt: &EvaluationPoint) -> Result<Self> {
        let derivs = p.derivatives(pt)?;
        let act_dims = p.activation_dims();
        let param_dims = p.param_dims();
        let n = derivs.len();

        let jz: Vec<&DenseBlock> = derivs.iter().map(|d| &d.jac_z).collect();
        let backprop = backprop_vectors(&jz)?;
        let mut gradient = Vec::with_capacity(p.total_params());
        for (d, b) in derivs.iter().zip(&backprop) {
            gradient.extend(d.jac_x.matvec_t(b)?);
        }

        let sub: Vec<DenseBlock> = derivs[1..]
            .iter()
            .map(|d| {
                let mut s = d.jac_z.clone();
                s.scale(-1.0);
                s
            })
            .collect();
        let m = BlockLowerBidiagonal::unit(sub, &act_dims[1..])?;
        let shift = ShiftOperator::new(act_dims.clone())?;
        let kron_x = KronIdentityDiagonal::new(backprop.clone(), param_dims.clone())?;
        let kron_z = KronIdentityDiagonal::new(backprop.clone(), act_dims[..n].to_vec())?;

        let mut jac_x = Vec::with_capacity(n);
        let mut jac_z = Vec::with_capacity(n);
        let mut hess_xx = Vec::with_capacity(n);
        let mut hess_zx = Vec::with_capacity(n);
        let mut hess_xz = Vec::with_capacity(n);
        let mut hess_zz = Vec::with_capacity(n);
        for d in derivs {
            jac_x.push(d.jac_x);
            jac_z.push(d.jac_z);
            hess_xx.push(d.hess_xx);
            hess_zx.push(d.hess_zx);
            hess_xz.push(d.hess_xz);
            hess_zz.push(d.hess_zz);
        }

        Ok(Self {
            param_offsets: offsets(&param_dims),
            act_dims,
            param_dims,
            backprop,
            gradient,
            jac_x: BlockDiagonal::new(jac_x),
            jac_z: BlockDiagonal::new(jac_z),
            hess_xx: BlockDiagonal::new(hess_xx),
            hess_zx: BlockDiagonal::new(hess_zx),
            hess_xz: BlockDiagonal::new(hess_xz),
            hess_zz: BlockDiagonal::new(hess_zz),
            m,
            shift,
            kron_x,
            kron_z,
        })
    }

    pub fn layers(&self) -> usize {
        self.param_dims.len()
    }

    /// Number of parameters, the side length of `H`.
    pub fn dim(&self) -> usize {
        *self.param_offsets.last().unwrap()
    }

    /// Activation sizes `a_0..a_L`.
    pub fn activation_dims(&self) -> &[usize] {
        &self.act_dims
    }

    pub fn param_dims(&self) -> &[usize] {
        &self.param_dims
    }

    pub fn param_offsets(&self) -> &[usize] {
        &self.param_offsets
    }

    /// `b_l = ∂z_L/∂z_l` for each layer.
    pub fn backprop(&self, l: usize) -> &[f64] {
        &self.backprop[l]
    }

    /// Gradient of the loss, a by-product of assembly.
    pub fn gradient(&self) -> &[f64] {
        &self.gradient
    }

    pub fn jac_x(&self) -> &BlockDiagonal {
        &self.jac_x
    }

    pub fn jac_z(&self) -> &BlockDiagonal {
        &self.jac_z
    }

    pub fn hess_xx(&self) -> &BlockDiagonal {
        &self.hess_xx
    }

    pub fn hess_zx(&self) -> &BlockDiagonal {
        &self.hess_zx
    }

    pub fn hess_xz(&self) -> &BlockDiagonal {
        &self.hess_xz
    }

    pub fn hess_zz(&self) -> &BlockDiagonal {
        &self.hess_zz
    }

    /// The unit lower-bidiagonal `M` over `a_1..a_L`.
    pub fn forward_operator(&self) -> &BlockLowerBidiagonal {
        &self.m
    }

    pub fn shift(&self) -> &ShiftOperator {
        &self.shift
    }

    /// `I ⊗ b_l` blocks acting on parameter-indexed second derivatives.
    pub fn kron_params(&self) -> &KronIdentityDiagonal {
        &self.kron_x
    }

    /// `I ⊗ b_l` blocks acting on input-indexed second derivatives.
    pub fn kron_inputs(&self) -> &KronIdentityDiagonal {
        &self.kron_z
    }

    pub fn workspace(&self) -> HvpWorkspace {
        let n = self.layers();
        let a_in: usize = self.act_dims[..n].iter().sum();
        let a_out: usize = self.act_dims[1..].iter().sum();
        let max_x = (0..n)
            .map(|l| self.act_dims[l + 1] * self.param_dims[l])
            .max()
            .unwrap_or(0);
        let max_z = (0..n)
            .map(|l| self.act_dims[l + 1] * self.act_dims[l])
            .max()
            .unwrap_or(0);
        HvpWorkspace {
            forward: vec![0.0; a_out],
            shifted: vec![0.0; a_in],
            back: vec![0.0; a_in],
            pulled: vec![0.0; a_out],
            tmp_x: vec![0.0; max_x],
            tmp_z: vec![0.0; max_z],
        }
    }

    /// `out = H v` without allocating.
    pub fn hvp_into(&self, v: &[f64], ws: &mut HvpWorkspace, out: &mut [f64]) -> Result<()> {
        check_len("HessianOperator::hvp input", self.dim(), v.len())?;
        check_len("HessianOperator::hvp output", self.dim(), out.len())?;

        // Directional derivative of every activation, then moved to layer inputs.
        ws.forward.iter_mut().for_each(|x| *x = 0.0);
        self.jac_x.gemv_acc(1.0, v, &mut ws.forward)?;
        self.m.solve_in_place(&mut ws.forward)?;
        self.shift.apply_into(&ws.forward, &mut ws.shifted)?;

        let z_off = self.hess_zz.col_offsets();
        let x_rows = self.hess_xx.row_offsets();
        let z_rows = self.hess_zz.row_offsets();
        for l in 0..self.layers() {
            let v_l = &v[self.param_offsets[l]..self.param_offsets[l + 1]];
            let g_l = &ws.shifted[z_off[l]..z_off[l + 1]];

            let tx = &mut ws.tmp_x[..x_rows[l + 1] - x_rows[l]];
            tx.iter_mut().for_each(|x| *x = 0.0);
            self.hess_xx.block(l).gemv_acc(1.0, v_l, tx)?;
            if l > 0 {
                self.hess_zx.block(l).gemv_acc(1.0, g_l, tx)?;
            }
            self.kron_x.apply_block(
                l,
                tx,
                &mut out[self.param_offsets[l]..self.param_offsets[l + 1]],
            )?;

            // The first layer's input contribution is dropped by the shift.
            let s_l = &mut ws.back[z_off[l]..z_off[l + 1]];
            if l == 0 {
                s_l.iter_mut().for_each(|x| *x = 0.0);
                continue;
            }
            let tz = &mut ws.tmp_z[..z_rows[l + 1] - z_rows[l]];
            tz.iter_mut().for_each(|x| *x = 0.0);
            self.hess_xz.block(l).gemv_acc(1.0, v_l, tz)?;
            self.hess_zz.block(l).gemv_acc(1.0, g_l, tz)?;
            self.kron_z.apply_block(l, tz, s_l)?;
        }

        self.shift.apply_transpose_into(&ws.back, &mut ws.pulled)?;
        self.m.solve_transpose_in_place(&mut ws.pulled)?;
        self.jac_x.gemv_t_acc(1.0, &ws.pulled, out)?;
        Ok(())
    }

    pub fn hvp(&self, v: &[f64], ws: &mut HvpWorkspace) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.hvp_into(v, ws, &mut out)?;
        Ok(out)
    }

    /// Allocating convenience wrapper around [`Self::hvp`].
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.hvp(v, &mut self.workspace())
    }
}
