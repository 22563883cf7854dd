//! The semantic-similarity sketch graph.
//!
//! Edges come from cosine similarity between patch embeddings only: each row
//! keeps its self-loop (weight 1) plus its two most similar neighbors,
//! weighted 0.5·alpha and 0.2·alpha. Positional encodings never touch the
//! default edge construction. The global full-sketch node is prepended with a
//! fixed 0.5 block, and the extended matrix is symmetrically normalized by
//! its row-sum degrees. An ablation variant instead scores edges with
//! PE-shifted dot products and softmaxes each row over its support.

use dcg_tensor::{Scalar, Tensor};

use crate::error::{CoreError, Result};

/// Norms below this are treated as zero vectors; their cosine is defined 0.
pub const NORM_EPS: f64 = 1e-12;

/// Weight on the most similar neighbor.
pub fn top1_weight<T: Scalar>() -> T {
    T::of(0.5)
}

/// Weight on the second most similar neighbor.
pub fn top2_weight<T: Scalar>() -> T {
    T::of(0.2)
}

/// Cosine similarity of two equal-length vectors. When either norm is below
/// `NORM_EPS` (blank patches embed near zero after a zeroed-out input), the
/// similarity is defined as 0 instead of dividing by ~0.
pub fn cosine_similarity<T: Scalar>(u: &[T], v: &[T]) -> T {
    debug_assert_eq!(u.len(), v.len());
    let mut dot = T::zero();
    let mut nu = T::zero();
    let mut nv = T::zero();
    for (&a, &b) in u.iter().zip(v.iter()) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let (nu, nv) = (nu.sqrt(), nv.sqrt());
    let eps = T::of(NORM_EPS);
    if nu < eps || nv < eps {
        return T::zero();
    }
    dot / (nu * nv)
}

/// Indices of the two largest values in `row`, excluding `skip`. Ties break
/// toward the lower index so graph construction is reproducible. Returns
/// fewer than two when the row is degenerate (M <= 2).
pub fn top2_neighbors<T: Scalar>(row: &[T], skip: usize) -> (Option<usize>, Option<usize>) {
    let mut first: Option<usize> = None;
    for (j, &v) in row.iter().enumerate() {
        if j == skip {
            continue;
        }
        match first {
            Some(f) if row[f] >= v => {}
            _ => first = Some(j),
        }
    }
    let mut second: Option<usize> = None;
    if let Some(f) = first {
        for (j, &v) in row.iter().enumerate() {
            if j == skip || j == f {
                continue;
            }
            match second {
                Some(s) if row[s] >= v => {}
                _ => second = Some(j),
            }
        }
    }
    (first, second)
}

/// Pairwise cosine similarities of the rows of an [M, dim] matrix.
pub fn cosine_matrix<T: Scalar>(v: &Tensor<T>) -> Tensor<T> {
    let m = v.rows();
    let mut out = Tensor::zeros(&[m, m]);
    for i in 0..m {
        out.set2(i, i, T::one());
        for j in (i + 1)..m {
            let a = cosine_similarity(v.row_slice(i), v.row_slice(j));
            out.set2(i, j, a);
            out.set2(j, i, a);
        }
    }
    out
}

/// Masked adjacency over patch embeddings: diagonal 1, the row's two most
/// similar neighbors at 0.5·alpha and 0.2·alpha, zero elsewhere. Positional
/// encodings are not inputs here by construction.
pub fn build_masked_adjacency<T: Scalar>(v: &Tensor<T>) -> Tensor<T> {
    let alphas = cosine_matrix(v);
    masked_adjacency_from_scores(&alphas)
}

/// Apply the self-loop + weighted top-2 mask to a precomputed score matrix.
pub fn masked_adjacency_from_scores<T: Scalar>(alphas: &Tensor<T>) -> Tensor<T> {
    let m = alphas.rows();
    let mut a = Tensor::zeros(&[m, m]);
    for i in 0..m {
        a.set2(i, i, T::one());
        let (j1, j2) = top2_neighbors(alphas.row_slice(i), i);
        if let Some(j) = j1 {
            a.set2(i, j, top1_weight::<T>() * alphas.at2(i, j));
        }
        if let Some(j) = j2 {
            a.set2(i, j, top2_weight::<T>() * alphas.at2(i, j));
        }
    }
    a
}

/// Prepend the global node: row 0 is [0.5, 0, ..., 0] and column 0 below it
/// is 0.5, with the patch adjacency in the lower-right block.
pub fn extend_with_global<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let m = a.rows();
    let mut ext = Tensor::zeros(&[m + 1, m + 1]);
    let half = T::of(0.5);
    ext.set2(0, 0, half);
    for i in 0..m {
        ext.set2(i + 1, 0, half);
        for j in 0..m {
            ext.set2(i + 1, j + 1, a.at2(i, j));
        }
    }
    ext
}

/// Symmetric degree normalization with row-sum degrees:
/// out(i, j) = a(i, j) / sqrt(deg_i * deg_j).
pub fn sym_normalize<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let m = a.rows();
    let mut deg = vec![T::zero(); m];
    for i in 0..m {
        let mut acc = T::zero();
        for j in 0..m {
            acc += a.at2(i, j);
        }
        if acc <= T::zero() {
            return Err(CoreError::Data(format!(
                "row {i} of the adjacency has non-positive degree"
            )));
        }
        deg[i] = acc;
    }
    let mut out = Tensor::zeros(&[m, m]);
    for i in 0..m {
        for j in 0..m {
            let v = a.at2(i, j) / (deg[i] * deg[j]).sqrt();
            out.set2(i, j, v);
        }
    }
    Ok(out)
}

/// Ablation scores: alpha'(i, j) = (v_i + p_i)^T (v_j + p_j), an unnormalized
/// dot product with the absolute encodings mixed into both sides.
/// `pe_rows` must supply one row per patch (positions 1..=M of the table).
pub fn pe_in_edges_scores<T: Scalar>(v: &Tensor<T>, pe_rows: &Tensor<T>) -> Result<Tensor<T>> {
    if v.shape() != pe_rows.shape() {
        return Err(CoreError::Config(format!(
            "embeddings {:?} and PE rows {:?} disagree",
            v.shape(),
            pe_rows.shape()
        )));
    }
    let (m, d) = (v.rows(), v.cols());
    let mut shifted = Tensor::zeros(&[m, d]);
    for i in 0..m {
        for c in 0..d {
            shifted.set2(i, c, v.at2(i, c) + pe_rows.at2(i, c));
        }
    }
    let mut out = Tensor::zeros(&[m, m]);
    for i in 0..m {
        for j in i..m {
            let mut dot = T::zero();
            for c in 0..d {
                dot += shifted.at2(i, c) * shifted.at2(j, c);
            }
            out.set2(i, j, dot);
            out.set2(j, i, dot);
        }
    }
    Ok(out)
}

/// Row-wise softmax over each row's nonzero support, leaving zeros in place.
pub fn softmax_over_support<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let m = a.rows();
    let n = a.cols();
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let support: Vec<usize> = (0..n).filter(|&j| a.at2(i, j) != T::zero()).collect();
        if support.is_empty() {
            continue;
        }
        let mut mx = a.at2(i, support[0]);
        for &j in &support {
            if a.at2(i, j) > mx {
                mx = a.at2(i, j);
            }
        }
        let mut denom = T::zero();
        for &j in &support {
            denom += (a.at2(i, j) - mx).exp();
        }
        for &j in &support {
            out.set2(i, j, (a.at2(i, j) - mx).exp() / denom);
        }
    }
    out
}

/// Adjacency matrices of one sketch graph, exportable as CSV for inspection.
#[derive(Debug, Clone)]
pub struct GraphMatrices<T: Scalar> {
    /// Masked patch adjacency (M x M).
    pub a: Tensor<T>,
    /// Globally extended matrix ((M+1) x (M+1)); in the PE-in-edges variant
    /// this is the post-softmax matrix.
    pub a_tilde: Tensor<T>,
    /// Symmetrically normalized matrix ((M+1) x (M+1)).
    pub a_hat: Tensor<T>,
}

impl<T: Scalar> GraphMatrices<T> {
    pub fn to_csv(t: &Tensor<T>) -> String {
        let mut s = String::new();
        for i in 0..t.rows() {
            let row: Vec<String> = t
                .row_slice(i)
                .iter()
                .map(|v| format!("{}", v.as_f64()))
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// Build all three matrices for patch embeddings `v` ([M, dim]). When
/// `pe_in_edges` is set, `pe_rows` supplies the absolute encodings of
/// positions 1..=M and the extended matrix is softmaxed over its support
/// before normalization.
pub fn graph_matrices<T: Scalar>(
    v: &Tensor<T>,
    pe_in_edges: Option<&Tensor<T>>,
) -> Result<GraphMatrices<T>> {
    let a = match pe_in_edges {
        None => build_masked_adjacency(v),
        Some(pe_rows) => {
            let scores = pe_in_edges_scores(v, pe_rows)?;
            masked_adjacency_from_scores(&scores)
        }
    };
    let ext = extend_with_global(&a);
    let a_tilde = if pe_in_edges.is_some() {
        softmax_over_support(&ext)
    } else {
        ext
    };
    let a_hat = sym_normalize(&a_tilde)?;
    Ok(GraphMatrices { a, a_tilde, a_hat })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_self_similarity_is_one() {
        let x = [0.3f64, -1.2, 4.0];
        assert!((cosine_similarity(&x, &x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn cosine_hand_case() {
        let got: f64 = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]);
        assert!((got - 0.7071068).abs() < 1e-6);
    }

    #[test]
    fn cosine_of_near_zero_vector_defined_zero() {
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn masked_row_keeps_top2_with_paper_weights() {
        // alpha(1,2)=0.9, alpha(1,3)=0.8, alpha(1,4)=0.1 (1-based description).
        let mut scores = Tensor::<f64>::zeros(&[4, 4]);
        for i in 0..4 {
            scores.set2(i, i, 1.0);
        }
        scores.set2(0, 1, 0.9);
        scores.set2(0, 2, 0.8);
        scores.set2(0, 3, 0.1);
        let a = masked_adjacency_from_scores(&scores);
        assert_eq!(a.at2(0, 0), 1.0);
        assert!((a.at2(0, 1) - 0.45).abs() < 1e-12);
        assert!((a.at2(0, 2) - 0.16).abs() < 1e-12);
        assert_eq!(a.at2(0, 3), 0.0);
    }

    #[test]
    fn identical_patches_tie_break_to_lowest_index() {
        // All-equal embeddings: every alpha = 1; row 0 picks columns 1 and 2.
        let v = Tensor::<f64>::from_vec(&[4, 2], vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0])
            .unwrap();
        let a = build_masked_adjacency(&v);
        assert_eq!(a.at2(0, 0), 1.0);
        assert!((a.at2(0, 1) - 0.5).abs() < 1e-12);
        assert!((a.at2(0, 2) - 0.2).abs() < 1e-12);
        assert_eq!(a.at2(0, 3), 0.0);
        // Row 2 prefers columns 0 then 1.
        assert!((a.at2(2, 0) - 0.5).abs() < 1e-12);
        assert!((a.at2(2, 1) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn two_patch_degenerate_case_uses_only_top1_weight() {
        let v = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 0.0, 0.5, 0.5]).unwrap();
        let a = build_masked_adjacency(&v);
        let alpha = cosine_similarity(v.row_slice(0), v.row_slice(1));
        assert!((a.at2(0, 1) - 0.5 * alpha).abs() < 1e-12);
        assert_eq!(a.at2(0, 0), 1.0);
    }

    #[test]
    fn extend_with_global_block_structure() {
        let a = Tensor::<f64>::from_vec(&[1, 1], vec![1.0]).unwrap();
        let ext = extend_with_global(&a);
        assert_eq!(ext.shape(), &[2, 2]);
        assert_eq!(ext.at2(0, 0), 0.5);
        assert_eq!(ext.at2(0, 1), 0.0);
        assert_eq!(ext.at2(1, 0), 0.5);
        assert_eq!(ext.at2(1, 1), 1.0);
    }

    #[test]
    fn sym_normalize_hand_case() {
        let ext = Tensor::<f64>::from_vec(&[2, 2], vec![0.5, 0.0, 0.5, 1.0]).unwrap();
        let n = sym_normalize(&ext).unwrap();
        assert!((n.at2(0, 0) - 1.0).abs() < 1e-12);
        assert_eq!(n.at2(0, 1), 0.0);
        assert!((n.at2(1, 0) - 0.5 / (0.75f64).sqrt()).abs() < 1e-12);
        assert!((n.at2(1, 0) - 0.57735).abs() < 1e-5);
        assert!((n.at2(1, 1) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sym_normalize_identity_fixed_point() {
        let eye = {
            let mut t = Tensor::<f64>::zeros(&[3, 3]);
            for i in 0..3 {
                t.set2(i, i, 1.0);
            }
            t
        };
        assert_eq!(sym_normalize(&eye).unwrap(), eye);
    }

    #[test]
    fn sym_normalize_scale_invariant() {
        let a = Tensor::<f64>::from_vec(&[2, 2], vec![0.5, 0.0, 0.5, 1.0]).unwrap();
        let scaled = a.map(|x| x * 3.7);
        let n1 = sym_normalize(&a).unwrap();
        let n2 = sym_normalize(&scaled).unwrap();
        for (x, y) in n1.data().iter().zip(n2.data().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_matrix_sign_follows_similarities() {
        // Positively correlated patches: every entry of A-hat is >= 0.
        let pos = Tensor::<f64>::from_vec(
            &[3, 2],
            vec![1.0, 0.1, 0.9, 0.3, 0.8, 0.2],
        )
        .unwrap();
        let g = graph_matrices(&pos, None).unwrap();
        assert!(g.a_hat.data().iter().all(|&v| v >= 0.0));
        // An anti-correlated pair propagates its negative similarity into
        // the kept coefficients rather than being clamped away.
        let mixed = Tensor::<f64>::from_vec(
            &[3, 2],
            vec![1.0, 0.0, -1.0, -0.05, 0.0, 1.0],
        )
        .unwrap();
        let g = graph_matrices(&mixed, None).unwrap();
        assert!(g.a.data().iter().any(|&v| v < 0.0));
    }

    #[test]
    fn default_edges_ignore_pe_perturbations() {
        let v = Tensor::<f64>::from_vec(
            &[3, 4],
            vec![0.3, 0.7, -0.2, 0.9, 0.1, 0.4, 0.8, -0.5, 0.6, 0.6, 0.1, 0.2],
        )
        .unwrap();
        let g1 = graph_matrices(&v, None).unwrap();
        // PEs simply are not inputs; recomputing gives bit-identical output.
        let g2 = graph_matrices(&v, None).unwrap();
        assert_eq!(g1.a, g2.a);
        assert_eq!(g1.a_hat, g2.a_hat);
    }

    #[test]
    fn pe_in_edges_zero_pe_reduces_to_plain_dot() {
        let v = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let zeros = Tensor::<f64>::zeros(&[2, 2]);
        let scores = pe_in_edges_scores(&v, &zeros).unwrap();
        assert_eq!(scores.at2(0, 1), 11.0);
        assert_eq!(scores.at2(0, 0), 5.0);
    }

    #[test]
    fn pe_in_edges_rows_softmax_to_one_over_support() {
        let v = Tensor::<f64>::from_vec(
            &[3, 4],
            vec![0.3, 0.7, -0.2, 0.9, 0.1, 0.4, 0.8, -0.5, 0.6, 0.6, 0.1, 0.2],
        )
        .unwrap();
        let pe = Tensor::<f64>::from_vec(
            &[3, 4],
            vec![0.8, -0.1, 0.2, 0.0, 0.84, 0.54, 0.1, 0.99, 0.9, -0.41, 0.2, 0.97],
        )
        .unwrap();
        let g = graph_matrices(&v, Some(&pe)).unwrap();
        for i in 0..g.a_tilde.rows() {
            let sum: f64 = g.a_tilde.row_slice(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {i} sums to {sum}");
        }
        // Zeros outside the support stay zero.
        assert_eq!(g.a_tilde.at2(0, 1), 0.0);
    }

    #[test]
    fn pe_in_edges_changes_adjacency_on_generic_fixture() {
        let v = Tensor::<f64>::from_vec(
            &[3, 4],
            vec![0.3, 0.7, -0.2, 0.9, 0.1, 0.4, 0.8, -0.5, 0.6, 0.6, 0.1, 0.2],
        )
        .unwrap();
        let pe = Tensor::<f64>::from_vec(
            &[3, 4],
            vec![0.8, -0.1, 0.2, 0.0, 0.84, 0.54, 0.1, 0.99, 0.9, -0.41, 0.2, 0.97],
        )
        .unwrap();
        let plain = graph_matrices(&v, None).unwrap();
        let ablated = graph_matrices(&v, Some(&pe)).unwrap();
        assert_ne!(plain.a_hat, ablated.a_hat);
    }
}
