//! Scaled dot-product attention and the style-injection variants.

use crate::encoder::TokenSequence;
use crate::error::{ensure, Result};
use crate::numerics::{matmul, matmul_transposed, softmax_rows, Matrix};

/// `softmax(q·kᵀ / sqrt(d_k)) · v`.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, d_k: usize) -> Result<Matrix> {
    ensure!(
        q.cols() == d_k && k.cols() == d_k,
        "attention: query width {} / key width {} != d_k {d_k}",
        q.cols(),
        k.cols()
    );
    ensure!(
        k.rows() == v.rows(),
        "attention: {} keys but {} values",
        k.rows(),
        v.rows()
    );
    ensure!(k.rows() >= 1, "attention: empty key set");
    let inv = 1.0 / (d_k as f64).sqrt();
    let scores = matmul_transposed(q, k)?.map(|s| s * inv);
    matmul(&softmax_rows(&scores), v)
}

/// Blends style and content attention with two independent softmax
/// normalizations: `alpha·A(q, k_s, v_s) + (1 − alpha)·A(q, k_c, v_c)`.
///
/// The endpoints return the corresponding single term unchanged, so
/// `alpha = 0` reproduces content-only attention bit for bit.
pub fn blended_attention(
    q: &Matrix,
    k_c: &Matrix,
    v_c: &Matrix,
    k_s: &Matrix,
    v_s: &Matrix,
    alpha: f64,
    d_k: usize,
) -> Result<Matrix> {
    ensure!(
        (0.0..=1.0).contains(&alpha),
        "blend weight alpha must lie in [0, 1], got {alpha}"
    );
    if alpha == 0.0 {
        return attention(q, k_c, v_c, d_k);
    }
    if alpha == 1.0 {
        return attention(q, k_s, v_s, d_k);
    }
    let a_s = attention(q, k_s, v_s, d_k)?;
    let a_c = attention(q, k_c, v_c, d_k)?;
    let data = a_s
        .data()
        .iter()
        .zip(a_c.data())
        .map(|(s, c)| alpha * s + (1.0 - alpha) * c)
        .collect();
    Matrix::from_vec(a_s.rows(), a_s.cols(), data)
}

/// Single joint softmax over the union of content and style keys.
pub fn inject_token_concat(
    q: &Matrix,
    k_c: &Matrix,
    v_c: &Matrix,
    k_s: &Matrix,
    v_s: &Matrix,
    d_k: usize,
) -> Result<Matrix> {
    ensure!(k_s.rows() >= 1, "token concat: style key set is empty");
    ensure!(
        k_s.rows() == v_s.rows(),
        "token concat: {} style keys but {} style values",
        k_s.rows(),
        v_s.rows()
    );
    let k = Matrix::vcat(&[k_c, k_s])?;
    let v = Matrix::vcat(&[v_c, v_s])?;
    attention(q, &k, &v, d_k)
}

/// Token-level blend of content and style embeddings.
///
/// The style sequence (one image's worth of tokens) is tiled once per view
/// so that style token `i` is paired with token `i` of every view, then
/// each pair is mixed as `(1 − alpha)·content + alpha·style`.
pub fn inject_embedding_blend(
    content: &TokenSequence,
    style: &TokenSequence,
    alpha: f64,
) -> Result<TokenSequence> {
    ensure!(
        (0.0..=1.0).contains(&alpha),
        "blend weight alpha must lie in [0, 1], got {alpha}"
    );
    ensure!(
        content.dim() == style.dim(),
        "embedding blend: token widths {} and {} differ",
        content.dim(),
        style.dim()
    );
    let n = style.len();
    ensure!(
        n >= 1 && content.len().is_multiple_of(n),
        "embedding blend: {} content tokens is not a multiple of {} style tokens",
        content.len(),
        n
    );
    if alpha == 0.0 {
        return Ok(content.clone());
    }
    let mut out = content.tokens().clone();
    for r in 0..out.rows() {
        let s = style.tokens().row(r % n);
        for (o, sv) in out.row_mut(r).iter_mut().zip(s) {
            *o = (1.0 - alpha) * *o + alpha * sv;
        }
    }
    TokenSequence::new(out, content.source())
}
