//! Pre-norm transformer building blocks shared by the image encoder and the
//! triplane decoder.

use crate::decoder::attention::attention;
use crate::error::{ensure, Result};
use crate::numerics::{gelu, layer_norm, matmul, Matrix, Rng, LN_EPS};

/// Layer-norm affine parameters, stored as 1×d matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub scale: Matrix,
    pub bias: Matrix,
}

impl NormParams {
    pub fn identity(dim: usize) -> Self {
        Self {
            scale: Matrix::from_vec(1, dim, vec![1.0; dim]).expect("shape"),
            bias: Matrix::zeros(1, dim),
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        layer_norm(x, self.scale.data(), self.bias.data(), LN_EPS)
    }

    pub(crate) fn tensors(&self) -> [&Matrix; 2] {
        [&self.scale, &self.bias]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Matrix; 2] {
        [&mut self.scale, &mut self.bias]
    }
}

/// Output-projection scale `1/sqrt(branches)` for a stack with `branches`
/// residual additions, so untrained branch sums do not swamp the token
/// embeddings.
pub fn residual_scale(branches: usize) -> f64 {
    1.0 / (branches.max(1) as f64).sqrt()
}

/// Bias-free multi-head attention projections, each `dim × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

impl AttentionWeights {
    pub fn zeros(dim: usize) -> Self {
        Self {
            wq: Matrix::zeros(dim, dim),
            wk: Matrix::zeros(dim, dim),
            wv: Matrix::zeros(dim, dim),
            wo: Matrix::zeros(dim, dim),
        }
    }

    /// `1/sqrt(dim)` projections; `wo` is further multiplied by
    /// `residual_scale`.
    pub fn random(dim: usize, residual_scale: f64, rng: &mut Rng) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        Self {
            wq: Matrix::gaussian(dim, dim, std, rng),
            wk: Matrix::gaussian(dim, dim, std, rng),
            wv: Matrix::gaussian(dim, dim, std, rng),
            wo: Matrix::gaussian(dim, dim, std * residual_scale, rng),
        }
    }

    pub(crate) fn tensors(&self) -> [&Matrix; 4] {
        [&self.wq, &self.wk, &self.wv, &self.wo]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo]
    }
}

/// Two-layer bias-free GELU MLP, `dim → hidden → dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl MlpWeights {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros(dim, hidden),
            w2: Matrix::zeros(hidden, dim),
        }
    }

    pub fn random(dim: usize, hidden: usize, residual_scale: f64, rng: &mut Rng) -> Self {
        Self {
            w1: Matrix::gaussian(dim, hidden, 1.0 / (dim as f64).sqrt(), rng),
            w2: Matrix::gaussian(hidden, dim, residual_scale / (hidden as f64).sqrt(), rng),
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let h = matmul(x, &self.w1)?.map(gelu);
        matmul(&h, &self.w2)
    }

    pub(crate) fn tensors(&self) -> [&Matrix; 2] {
        [&self.w1, &self.w2]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Matrix; 2] {
        [&mut self.w1, &mut self.w2]
    }
}

/// Splits `q` (n × heads·head_dim) into heads, runs `per_head` on each
/// `(head index, query block)` and joins the results column-wise in head
/// order.
pub fn split_heads<F>(q: &Matrix, heads: usize, per_head: F) -> Result<Matrix>
where
    F: Fn(usize, &Matrix) -> Result<Matrix>,
{
    ensure!(
        heads >= 1 && q.cols().is_multiple_of(heads),
        "width {} not divisible into {heads} heads",
        q.cols()
    );
    let head_dim = q.cols() / heads;
    let outs = (0..heads)
        .map(|h| per_head(h, &q.col_block(h * head_dim, head_dim)))
        .collect::<Result<Vec<_>>>()?;
    Matrix::hcat(&outs)
}

/// Standard multi-head attention of `x_q` over the token set `x_kv`,
/// including the output projection.
pub fn multi_head_attention(
    w: &AttentionWeights,
    x_q: &Matrix,
    x_kv: &Matrix,
    heads: usize,
) -> Result<Matrix> {
    let q = matmul(x_q, &w.wq)?;
    let k = matmul(x_kv, &w.wk)?;
    let v = matmul(x_kv, &w.wv)?;
    let head_dim = q.cols() / heads.max(1);
    let joined = split_heads(&q, heads, |h, qh| {
        attention(
            qh,
            &k.col_block(h * head_dim, head_dim),
            &v.col_block(h * head_dim, head_dim),
            head_dim,
        )
    })?;
    matmul(&joined, &w.wo)
}

/// Self-attention + MLP block used by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub norm_attn: NormParams,
    pub attn: AttentionWeights,
    pub norm_mlp: NormParams,
    pub mlp: MlpWeights,
}

impl EncoderBlock {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            norm_attn: NormParams::identity(dim),
            attn: AttentionWeights::zeros(dim),
            norm_mlp: NormParams::identity(dim),
            mlp: MlpWeights::zeros(dim, hidden),
        }
    }

    pub fn random(dim: usize, hidden: usize, residual_scale: f64, rng: &mut Rng) -> Self {
        Self {
            norm_attn: NormParams::identity(dim),
            attn: AttentionWeights::random(dim, residual_scale, rng),
            norm_mlp: NormParams::identity(dim),
            mlp: MlpWeights::random(dim, hidden, residual_scale, rng),
        }
    }

    pub fn forward(&self, x: &Matrix, heads: usize) -> Result<Matrix> {
        let n = self.norm_attn.apply(x)?;
        let mut x = x.add(&multi_head_attention(&self.attn, &n, &n, heads)?)?;
        let n = self.norm_mlp.apply(&x)?;
        x.add_assign(&self.mlp.apply(&n)?)?;
        Ok(x)
    }

    pub(crate) fn tensors(&self) -> Vec<&Matrix> {
        let mut v: Vec<&Matrix> = self.norm_attn.tensors().into();
        v.extend(self.attn.tensors());
        v.extend(self.norm_mlp.tensors());
        v.extend(self.mlp.tensors());
        v
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v: Vec<&mut Matrix> = self.norm_attn.tensors_mut().into();
        v.extend(self.attn.tensors_mut());
        v.extend(self.norm_mlp.tensors_mut());
        v.extend(self.mlp.tensors_mut());
        v
    }
}
