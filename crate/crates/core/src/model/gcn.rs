//! Graph aggregation on the tape.
//!
//! Builds the masked adjacency from the embedding rows (cosine similarities,
//! self-loop + weighted top-2), extends it with the global node, normalizes
//! by row-sum degrees, and aggregates each node as
//! `h_i = sum_j a_hat(i, j) * (v_j + R(i, j)) + P(i)`,
//! where R comes from the learnable relative bank (fixed zero placeholder for
//! the global node) and P is the fixed absolute table (zero placeholder in
//! row 0). Disabling either encoding replaces its contribution with zero.
//! Edge coefficients are differentiable through the cosine values; the top-2
//! selection itself is data-dependent control flow.

use dcg_tensor::{Bindings, Scalar, Tape, Tensor, Var};

use crate::config::PeFlags;
use crate::error::Result;
use crate::graph::{self, GraphMatrices, NORM_EPS};
use crate::model::Linear;
use crate::pe::{RelPeRef, RelativePeBank};

/// Latent head: two-layer MLP over the concatenated aggregated rows,
/// emitting mean and log-variance of the sketch code.
pub struct LatentHead {
    hidden: Linear,
    out: Linear,
    latent_dim: usize,
}

/// Initial bias on the log-variance head: sigma starts near exp(-3) so the
/// sampled code stays close to mu early in training, while gradients still
/// reach the variance path through the reparameterization.
const LOGVAR_INIT_BIAS: f64 = -6.0;

impl LatentHead {
    pub fn init<T: Scalar, R: rand::Rng>(
        params: &mut dcg_tensor::ParamSet<T>,
        in_dim: usize,
        hidden_dim: usize,
        latent_dim: usize,
        rng: &mut R,
    ) -> Self {
        let head = LatentHead {
            hidden: Linear::init(params, "mlp/hidden", in_dim, hidden_dim, rng),
            out: Linear::init(params, "mlp/out", hidden_dim, 2 * latent_dim, rng),
            latent_dim,
        };
        let bias = params.get_mut(head.out.bias_id());
        for k in latent_dim..2 * latent_dim {
            bias.data_mut()[k] = T::of(LOGVAR_INIT_BIAS);
        }
        head
    }

    /// Returns (mu, logvar), each [1, latent_dim]; logvar clamped to [-20, 20].
    pub fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        binds: &Bindings,
        h_concat: Var,
    ) -> Result<(Var, Var)> {
        let h = tape.relu(self.hidden.forward(tape, binds, h_concat)?);
        let both = self.out.forward(tape, binds, h)?;
        let mu = tape.narrow_cols(both, 0, self.latent_dim)?;
        let logvar_raw = tape.narrow_cols(both, self.latent_dim, self.latent_dim)?;
        let logvar = tape.clamp(logvar_raw, T::of(-20.0), T::of(20.0));
        Ok((mu, logvar))
    }
}

/// One sketch graph's aggregation output.
pub struct Aggregated<T: Scalar> {
    /// Concatenated rows, [1, (M+1) * dim].
    pub h_concat: Var,
    /// Value snapshots of the adjacency matrices (for dumps and tests).
    pub matrices: GraphMatrices<T>,
}

/// Cosine similarity between two row vars, honoring the blank-patch rule:
/// when either norm is below NORM_EPS the similarity is the constant 0 and
/// no gradient flows through the pair.
fn cosine_var<T: Scalar>(
    tape: &Tape<T>,
    a: Var,
    norm_a: Var,
    b: Var,
    norm_b: Var,
) -> Result<Var> {
    let eps = T::of(NORM_EPS);
    if tape.value_ref(norm_a).item() < eps || tape.value_ref(norm_b).item() < eps {
        return Ok(tape.constant_scalar(T::zero()));
    }
    let dot = tape.sum_all(tape.mul(a, b)?);
    let denom = tape.mul(norm_a, norm_b)?;
    Ok(tape.div(dot, denom)?)
}

/// Aggregate the (M+1) embedding rows into the concatenated graph vector.
///
/// `node_rows[0]` is the global full-sketch embedding; `pe_rows` is the fixed
/// (M+1) x dim absolute table with the zero placeholder in row 0;
/// `pe_patch_rows` its rows 1..=M, used only by the PE-in-edges ablation.
pub fn aggregate_nodes<T: Scalar>(
    tape: &Tape<T>,
    binds: &Bindings,
    node_rows: &[Var],
    rel_bank: &RelativePeBank,
    pe_rows: &Tensor<T>,
    pe_patch_rows: &Tensor<T>,
    flags: PeFlags,
) -> Result<Aggregated<T>> {
    let m = node_rows.len() - 1;
    let dim = rel_bank.dim();

    // Pairwise edge scores between patch nodes (indices 1..=M).
    let mut score_vars: Vec<Vec<Option<Var>>> = vec![vec![None; m]; m];
    if flags.pe_in_edges {
        // alpha'(i, j) = (v_i + P(i))^T (v_j + P(j)), unnormalized.
        let mut shifted = Vec::with_capacity(m);
        for i in 0..m {
            let pe_row =
                tape.constant(Tensor::from_vec(&[1, dim], pe_patch_rows.row_slice(i).to_vec())?);
            shifted.push(tape.add(node_rows[i + 1], pe_row)?);
        }
        for i in 0..m {
            for j in (i + 1)..m {
                let dot = tape.sum_all(tape.mul(shifted[i], shifted[j])?);
                score_vars[i][j] = Some(dot);
                score_vars[j][i] = Some(dot);
            }
        }
    } else {
        let norms: Vec<Var> = (1..=m).map(|i| tape.l2norm(node_rows[i])).collect();
        for i in 0..m {
            for j in (i + 1)..m {
                let alpha = cosine_var(
                    tape,
                    node_rows[i + 1],
                    norms[i],
                    node_rows[j + 1],
                    norms[j],
                )?;
                score_vars[i][j] = Some(alpha);
                score_vars[j][i] = Some(alpha);
            }
        }
    }

    // Value snapshot of the scores for top-2 selection and the debug dump.
    let mut score_vals = Tensor::<T>::zeros(&[m.max(1), m.max(1)]);
    for i in 0..m {
        score_vals.set2(i, i, T::one());
        for j in 0..m {
            if let Some(v) = score_vars[i][j] {
                score_vals.set2(i, j, tape.value_ref(v).item());
            }
        }
    }

    // Extended adjacency entries per row: (column, var). Row 0 holds only the
    // fixed 0.5 self entry; patch rows hold 0.5 toward the global node, the
    // unit self-loop and the weighted top-2 neighbors.
    let half = tape.constant_scalar(T::of(0.5));
    let one = tape.constant_scalar(T::one());
    let mut rows: Vec<Vec<(usize, Var)>> = Vec::with_capacity(m + 1);
    rows.push(vec![(0, half)]);
    let mut a_values = Tensor::<T>::zeros(&[m.max(1), m.max(1)]);
    for i in 0..m {
        a_values.set2(i, i, T::one());
        let mut entries = vec![(0usize, half), (i + 1, one)];
        let (j1, j2) = graph::top2_neighbors(score_vals.row_slice(i), i);
        if let (Some(j), Some(alpha)) = (j1, j1.and_then(|j| score_vars[i][j])) {
            let w = tape.mul_scalar(alpha, graph::top1_weight::<T>());
            entries.push((j + 1, w));
            a_values.set2(i, j, tape.value_ref(w).item());
        }
        if let (Some(j), Some(alpha)) = (j2, j2.and_then(|j| score_vars[i][j])) {
            let w = tape.mul_scalar(alpha, graph::top2_weight::<T>());
            entries.push((j + 1, w));
            a_values.set2(i, j, tape.value_ref(w).item());
        }
        rows.push(entries);
    }

    // PE-in-edges variant: softmax each row over its support before
    // normalization.
    if flags.pe_in_edges {
        for entries in rows.iter_mut() {
            let mut mx = T::neg_infinity();
            for &(_, v) in entries.iter() {
                let val = tape.value_ref(v).item();
                if val > mx {
                    mx = val;
                }
            }
            let exps: Vec<Var> = entries
                .iter()
                .map(|&(_, v)| tape.exp(tape.add_scalar(v, -mx)))
                .collect();
            let mut denom = exps[0];
            for &e in &exps[1..] {
                denom = tape.add(denom, e)?;
            }
            for (slot, e) in entries.iter_mut().zip(exps.into_iter()) {
                slot.1 = tape.div(e, denom)?;
            }
        }
    }

    // Row-sum degrees and the symmetric normalization.
    let mut rsqrt_deg = Vec::with_capacity(m + 1);
    for entries in &rows {
        let mut deg = entries[0].1;
        for &(_, v) in &entries[1..] {
            deg = tape.add(deg, v)?;
        }
        rsqrt_deg.push(tape.rsqrt(deg));
    }
    let mut a_tilde_values = Tensor::<T>::zeros(&[m + 1, m + 1]);
    let mut a_hat_values = Tensor::<T>::zeros(&[m + 1, m + 1]);
    let mut norm_rows: Vec<Vec<(usize, Var)>> = Vec::with_capacity(m + 1);
    for (i, entries) in rows.iter().enumerate() {
        let mut out = Vec::with_capacity(entries.len());
        for &(j, v) in entries {
            a_tilde_values.set2(i, j, tape.value_ref(v).item());
            let scaled = tape.mul(tape.mul(v, rsqrt_deg[i])?, rsqrt_deg[j])?;
            a_hat_values.set2(i, j, tape.value_ref(scaled).item());
            out.push((j, scaled));
        }
        norm_rows.push(out);
    }

    // Message aggregation with the per-pair relative encodings, then the
    // absolute encoding of the receiving node.
    let mut h_rows = Vec::with_capacity(m + 1);
    for (i, entries) in norm_rows.iter().enumerate() {
        let mut acc: Option<Var> = None;
        for &(j, coeff) in entries {
            let mut message = node_rows[j];
            if flags.relative_pe {
                if let RelPeRef::Offset(pid) = rel_bank.lookup(i, j)? {
                    message = tape.add(message, binds.var(pid))?;
                }
                // Placeholder: adding zero changes nothing, so skip it.
            }
            let term = tape.scale_by(message, coeff)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
        let mut h = acc.expect("every row has at least its self entry");
        if flags.absolute_pe {
            let pe_row = tape.constant(Tensor::from_vec(&[1, dim], pe_rows.row_slice(i).to_vec())?);
            h = tape.add(h, pe_row)?;
        }
        h_rows.push(h);
    }
    let stacked = tape.concat_rows(&h_rows)?;
    let h_concat = tape.reshape(stacked, &[1, (m + 1) * dim])?;

    Ok(Aggregated {
        h_concat,
        matrices: GraphMatrices {
            a: a_values,
            a_tilde: a_tilde_values,
            a_hat: a_hat_values,
        },
    })
}
