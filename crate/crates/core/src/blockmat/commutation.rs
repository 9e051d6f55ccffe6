use crate::error::{check_len, Error, Result};

/// The block commutation permutation `Π`.
///
/// A vector is partitioned into `G` groups (`x`, `y`, `z` in the lifted
/// system), each split into `L` per-layer sub-blocks with lengths
/// `dims[g][l]`. `Π` reorders it from group-major
/// `(x_1..x_L, y_1..y_L, z_1..z_L)` to layer-major `(x_1, y_1, z_1, .., x_L, y_L, z_L)`.
///
/// Stored as an index map: `map[k]` is the group-major position that lands
/// at layer-major position `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommutationPermutation {
    dims: Vec<Vec<usize>>,
    map: Vec<usize>,
}

impl CommutationPermutation {
    pub fn new(dims: Vec<Vec<usize>>) -> Result<Self> {
        let layers = dims.first().map_or(0, Vec::len);
        for g in &dims {
            check_len("CommutationPermutation layer count", layers, g.len())?;
        }
        let mut group_start = vec![0usize; dims.len()];
        let mut acc = 0;
        for (g, row) in dims.iter().enumerate() {
            group_start[g] = acc;
            acc += row.iter().sum::<usize>();
        }
        let mut map = Vec::with_capacity(acc);
        let mut within = group_start;
        for l in 0..layers {
            for (g, row) in dims.iter().enumerate() {
                map.extend(within[g]..within[g] + row[l]);
                within[g] += row[l];
            }
        }
        Ok(Self { dims, map })
    }

    pub fn groups(&self) -> usize {
        self.dims.len()
    }

    pub fn layers(&self) -> usize {
        self.dims.first().map_or(0, Vec::len)
    }

    pub fn dims(&self) -> &[Vec<usize>] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn index_map(&self) -> &[usize] {
        &self.map
    }

    /// Sub-block lengths in layer-major order: layer `l`'s block of the
    /// permuted system has dimension `Σ_g dims[g][l]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        (0..self.layers())
            .map(|l| self.dims.iter().map(|g| g[l]).sum())
            .collect()
    }

    pub fn group_dims(&self) -> Vec<usize> {
        self.dims.iter().map(|g| g.iter().sum()).collect()
    }

    /// True when the group count equals the layer count and
    /// `dims[g][l] == dims[l][g]`; then `Π` is its own inverse.
    pub fn is_square(&self) -> bool {
        let n = self.groups();
        self.layers() == n && (0..n).all(|g| (0..n).all(|l| self.dims[g][l] == self.dims[l][g]))
    }

    /// Group-major to layer-major.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("CommutationPermutation::apply", self.len(), v.len())?;
        Ok(self.map.iter().map(|&src| v[src]).collect())
    }

    /// Layer-major back to group-major.
    pub fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("CommutationPermutation::apply_inverse", self.len(), v.len())?;
        let mut out = vec![0.0; v.len()];
        for (k, &dst) in self.map.iter().enumerate() {
            out[dst] = v[k];
        }
        Ok(out)
    }

    /// Leading group of a layer-major vector, in group-major order.
    pub fn extract_group(&self, v: &[f64], group: usize) -> Result<Vec<f64>> {
        if group >= self.groups() {
            return Err(Error::DimensionMismatch {
                context: "CommutationPermutation::extract_group",
                expected: self.groups(),
                actual: group,
            });
        }
        let full = self.apply_inverse(v)?;
        let start: usize = self.group_dims()[..group].iter().sum();
        let len = self.group_dims()[group];
        Ok(full[start..start + len].to_vec())
    }
}
