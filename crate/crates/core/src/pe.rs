//! Positional encodings for patch nodes.
//!
//! Two kinds cooperate: a fixed sinusoidal absolute encoding of each patch's
//! position in the drawing order, and a learnable relative encoding of the
//! drawing-order offset |i-j| between two patches. The relative bank stores
//! one vector per offset, so target-invariance R(i, i+k) = R(j, j+k) and
//! undirectedness R(i, j) = R(j, i) hold as storage identities rather than
//! trained constraints. The global node (index 0) always reads fixed all-zero
//! placeholders that no gradient can reach.

use dcg_tensor::{ParamId, ParamSet, Scalar, Tensor};
use rand::Rng;

use crate::error::{CoreError, Result};

/// Sinusoidal absolute encoding of a drawing-order position:
/// entry 2d   = sin(pos / 10000^(2d/dim)),
/// entry 2d+1 = cos(pos / 10000^(2d/dim)).
/// Computed in f64 regardless of the model element type.
pub fn absolute_pe(pos: usize, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return Err(CoreError::Config(format!(
            "absolute PE length must be even, got {dim}"
        )));
    }
    let mut out = vec![0.0f64; dim];
    for d in 0..dim / 2 {
        let angle = pos as f64 / 10000f64.powf((2 * d) as f64 / dim as f64);
        out[2 * d] = angle.sin();
        out[2 * d + 1] = angle.cos();
    }
    Ok(out)
}

/// Fixed table of absolute encodings for positions 0..max_position.
/// Never trained; never mutated.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsolutePeTable<T: Scalar> {
    table: Tensor<T>,
}

impl<T: Scalar> AbsolutePeTable<T> {
    pub fn new(max_position: usize, dim: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(max_position * dim);
        for pos in 0..max_position {
            for v in absolute_pe(pos, dim)? {
                data.push(T::of(v));
            }
        }
        Ok(AbsolutePeTable {
            table: Tensor::from_vec(&[max_position, dim], data)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn max_position(&self) -> usize {
        self.table.rows()
    }

    pub fn row(&self, pos: usize) -> &[T] {
        self.table.row_slice(pos)
    }

    /// Content hash, used to assert the table never drifts during training.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.table.numel() * 8);
        for &v in self.table.data() {
            bytes.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        crate::config::fingerprint_bytes(&bytes)
    }
}

/// What a relative-PE lookup resolves to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelPeRef {
    /// The fixed all-zero placeholder used whenever the global node is
    /// involved; excluded from the gradient map by construction.
    Placeholder,
    /// The learnable vector for drawing-order offset |i-j|.
    Offset(ParamId),
}

/// Learnable relative encodings: M vectors r_0..r_{M-1}, one per offset.
#[derive(Debug, Clone)]
pub struct RelativePeBank {
    offsets: Vec<ParamId>,
    patch_count: usize,
    dim: usize,
}

impl RelativePeBank {
    /// Register M offset vectors in the parameter set, initialized
    /// i.i.d. Gaussian with std 0.02.
    pub fn init<T: Scalar, R: Rng>(
        params: &mut ParamSet<T>,
        patch_count: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let offsets = (0..patch_count)
            .map(|k| {
                params.insert(
                    &format!("rel_pe/r{k}"),
                    Tensor::randn(&[1, dim], 0.02, rng),
                    true,
                )
            })
            .collect();
        RelativePeBank {
            offsets,
            patch_count,
            dim,
        }
    }

    pub fn patch_count(&self) -> usize {
        self.patch_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offset_ids(&self) -> &[ParamId] {
        &self.offsets
    }

    /// Resolve the encoding for node pair (i, j), where index 0 is the
    /// global node and 1..=M are patches in drawing order.
    pub fn lookup(&self, i: usize, j: usize) -> Result<RelPeRef> {
        if i > self.patch_count || j > self.patch_count {
            return Err(CoreError::Config(format!(
                "relative PE lookup ({i}, {j}) out of range for M={}",
                self.patch_count
            )));
        }
        if i == 0 || j == 0 {
            return Ok(RelPeRef::Placeholder);
        }
        Ok(RelPeRef::Offset(self.offsets[i.abs_diff(j)]))
    }
}

/// The stacked absolute-PE matrix for a graph of M patches: row 0 is the
/// fixed zero placeholder for the global node, rows 1..=M are the absolute
/// encodings of positions 1..=M.
pub fn pe_rows_for_graph<T: Scalar>(patch_count: usize, dim: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); dim];
    for pos in 1..=patch_count {
        for v in absolute_pe(pos, dim)? {
            data.push(T::of(v));
        }
    }
    Tensor::from_vec(&[patch_count + 1, dim], data).map_err(Into::into)
}
