//! Triplane decoder: a stack of cross-attention / self-attention / MLP
//! layers that turns learnable triplane tokens into three feature planes,
//! with optional style injection in the last `K` cross-attention layers.

pub mod attention;

use std::fmt;
use std::str::FromStr;

use crate::encoder::TokenSequence;
use crate::error::{ensure, invalid, Error, Result};
use crate::numerics::{matmul, FeatureGrid, Matrix, Rng};
use crate::transformer::{
    multi_head_attention, residual_scale, split_heads, AttentionWeights, MlpWeights, NormParams,
};

use self::attention::{blended_attention, inject_embedding_blend, inject_token_concat};

pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_INJECT_LAYERS: usize = 4;
pub const DEFAULT_LAYERS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderDims {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub res: usize,
    pub channels: usize,
    pub mlp_hidden: usize,
}

impl Default for DecoderDims {
    fn default() -> Self {
        Self {
            layers: DEFAULT_LAYERS,
            heads: 4,
            dim: 64,
            res: 16,
            channels: 16,
            mlp_hidden: 256,
        }
    }
}

impl DecoderDims {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn triplane_tokens(&self) -> usize {
        3 * self.res * self.res
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.layers >= 1, "decoder needs at least one layer");
        ensure!(
            self.heads >= 1 && self.dim.is_multiple_of(self.heads),
            "decoder width {} not divisible by {} heads",
            self.dim,
            self.heads
        );
        ensure!(self.res >= 2, "triplane resolution must be >= 2");
        ensure!(self.channels >= 1, "triplane needs at least one channel");
        ensure!(self.mlp_hidden >= 1, "decoder MLP width must be positive");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InjectionMode {
    /// Separate style and content attention, outputs blended per head.
    #[default]
    BlendedAttention,
    /// Style keys/values appended to the content set, one joint softmax.
    TokenConcat,
    /// Style embeddings mixed into the content tokens before projection.
    EmbeddingBlend,
}

impl InjectionMode {
    pub const ALL: [InjectionMode; 3] = [
        InjectionMode::BlendedAttention,
        InjectionMode::TokenConcat,
        InjectionMode::EmbeddingBlend,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InjectionMode::BlendedAttention => "blended_attention",
            InjectionMode::TokenConcat => "token_concat",
            InjectionMode::EmbeddingBlend => "embedding_blend",
        }
    }
}

impl fmt::Display for InjectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InjectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InjectionMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid!("unknown injection mode {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleConfig {
    pub alpha: f64,
    pub inject_layers: usize,
    pub mode: InjectionMode,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            inject_layers: DEFAULT_INJECT_LAYERS,
            mode: InjectionMode::BlendedAttention,
        }
    }
}

impl StyleConfig {
    pub fn unstylized() -> Self {
        Self {
            inject_layers: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        ensure!(
            (0.0..=1.0).contains(&self.alpha),
            "alpha must lie in [0, 1], got {}",
            self.alpha
        );
        ensure!(
            self.inject_layers <= layers,
            "cannot inject into {} of {layers} layers",
            self.inject_layers
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub norm_cross: NormParams,
    pub cross: AttentionWeights,
    pub norm_self: NormParams,
    pub self_attn: AttentionWeights,
    pub norm_mlp: NormParams,
    pub mlp: MlpWeights,
}

impl DecoderLayer {
    fn zeros(d: &DecoderDims) -> Self {
        Self {
            norm_cross: NormParams::identity(d.dim),
            cross: AttentionWeights::zeros(d.dim),
            norm_self: NormParams::identity(d.dim),
            self_attn: AttentionWeights::zeros(d.dim),
            norm_mlp: NormParams::identity(d.dim),
            mlp: MlpWeights::zeros(d.dim, d.mlp_hidden),
        }
    }

    fn random(d: &DecoderDims, rng: &mut Rng) -> Self {
        let scale = residual_scale(3 * d.layers);
        Self {
            norm_cross: NormParams::identity(d.dim),
            cross: AttentionWeights::random(d.dim, scale, rng),
            norm_self: NormParams::identity(d.dim),
            self_attn: AttentionWeights::random(d.dim, scale, rng),
            norm_mlp: NormParams::identity(d.dim),
            mlp: MlpWeights::random(d.dim, d.mlp_hidden, scale, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    pub dims: DecoderDims,
    pub triplane_token_init: Matrix,
    pub triplane_positional_embedding: Matrix,
    pub layers: Vec<DecoderLayer>,
    pub final_norm: NormParams,
    /// Projects decoded tokens (width `dim`) to plane features (`channels`).
    pub plane_head: Matrix,
}

impl DecoderWeights {
    pub fn zeros(dims: DecoderDims) -> Result<Self> {
        dims.validate()?;
        let n = dims.triplane_tokens();
        Ok(Self {
            dims,
            triplane_token_init: Matrix::zeros(n, dims.dim),
            triplane_positional_embedding: Matrix::zeros(n, dims.dim),
            layers: (0..dims.layers).map(|_| DecoderLayer::zeros(&dims)).collect(),
            final_norm: NormParams::identity(dims.dim),
            plane_head: Matrix::zeros(dims.dim, dims.channels),
        })
    }

    pub fn random(dims: DecoderDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = Rng::new(seed);
        let n = dims.triplane_tokens();
        let std = 1.0 / (dims.dim as f64).sqrt();
        let triplane_token_init = Matrix::gaussian(n, dims.dim, 1.0, &mut rng);
        let triplane_positional_embedding = Matrix::gaussian(n, dims.dim, 1.0, &mut rng);
        let layers = (0..dims.layers)
            .map(|_| DecoderLayer::random(&dims, &mut rng))
            .collect();
        let plane_head = Matrix::gaussian(dims.dim, dims.channels, std, &mut rng);
        Ok(Self {
            dims,
            triplane_token_init,
            triplane_positional_embedding,
            layers,
            final_norm: NormParams::identity(dims.dim),
            plane_head,
        })
    }

    pub(crate) fn tensors(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.triplane_token_init, &self.triplane_positional_embedding];
        for l in &self.layers {
            v.extend(l.norm_cross.tensors());
            v.extend(l.cross.tensors());
            v.extend(l.norm_self.tensors());
            v.extend(l.self_attn.tensors());
            v.extend(l.norm_mlp.tensors());
            v.extend(l.mlp.tensors());
        }
        v.extend(self.final_norm.tensors());
        v.push(&self.plane_head);
        v
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![
            &mut self.triplane_token_init,
            &mut self.triplane_positional_embedding,
        ];
        for l in &mut self.layers {
            v.extend(l.norm_cross.tensors_mut());
            v.extend(l.cross.tensors_mut());
            v.extend(l.norm_self.tensors_mut());
            v.extend(l.self_attn.tensors_mut());
            v.extend(l.norm_mlp.tensors_mut());
            v.extend(l.mlp.tensors_mut());
        }
        v.extend(self.final_norm.tensors_mut());
        v.push(&mut self.plane_head);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneAxis {
    Xy,
    Yz,
    Xz,
}

/// Three axis-aligned feature planes. Plane `XY` is indexed by (x, y) with
/// x along columns, `YZ` by (y, z) and `XZ` by (x, z).
#[derive(Debug, Clone, PartialEq)]
pub struct Triplane {
    planes: [FeatureGrid; 3],
}

impl Triplane {
    pub fn new(xy: FeatureGrid, yz: FeatureGrid, xz: FeatureGrid) -> Result<Self> {
        let shape = (xy.res(), xy.channels());
        ensure!(
            [&yz, &xz].iter().all(|p| (p.res(), p.channels()) == shape),
            "triplane planes must share one shape"
        );
        ensure!(
            [&xy, &yz, &xz].iter().all(|p| p.data().iter().all(|v| v.is_finite())),
            "triplane has non-finite features"
        );
        Ok(Self {
            planes: [xy, yz, xz],
        })
    }

    pub fn zeros(res: usize, channels: usize) -> Result<Self> {
        let p = FeatureGrid::zeros(res, channels)?;
        Self::new(p.clone(), p.clone(), p)
    }

    /// Splits `3·res²` rows into XY, YZ, XZ blocks, each row-major over the
    /// `res × res` grid.
    pub fn from_tokens(tokens: &Matrix, res: usize) -> Result<Self> {
        let per = res * res;
        ensure!(
            tokens.rows() == 3 * per,
            "expected {} triplane tokens, got {}",
            3 * per,
            tokens.rows()
        );
        let c = tokens.cols();
        let plane = |i: usize| {
            FeatureGrid::new(res, c, tokens.data()[i * per * c..(i + 1) * per * c].to_vec())
        };
        Self::new(plane(0)?, plane(1)?, plane(2)?)
    }

    pub fn res(&self) -> usize {
        self.planes[0].res()
    }

    pub fn channels(&self) -> usize {
        self.planes[0].channels()
    }

    pub fn plane(&self, axis: PlaneAxis) -> &FeatureGrid {
        match axis {
            PlaneAxis::Xy => &self.planes[0],
            PlaneAxis::Yz => &self.planes[1],
            PlaneAxis::Xz => &self.planes[2],
        }
    }

    pub fn planes(&self) -> &[FeatureGrid; 3] {
        &self.planes
    }

    pub fn max_abs_diff(&self, other: &Triplane) -> f64 {
        self.planes
            .iter()
            .zip(&other.planes)
            .flat_map(|(a, b)| a.data().iter().zip(b.data()))
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }
}

/// Per-layer cross-attention source, resolved once per decode.
enum CrossSource<'a> {
    Content,
    Blended { style: &'a Matrix, alpha: f64 },
    Concat { style: &'a Matrix },
    Embedding { blended: &'a Matrix },
}

fn cross_attention(
    w: &AttentionWeights,
    x_q: &Matrix,
    content: &Matrix,
    source: &CrossSource<'_>,
    heads: usize,
) -> Result<Matrix> {
    let (style, alpha) = match *source {
        CrossSource::Content => return multi_head_attention(w, x_q, content, heads),
        CrossSource::Embedding { blended } => return multi_head_attention(w, x_q, blended, heads),
        CrossSource::Blended { style, alpha } => (style, Some(alpha)),
        CrossSource::Concat { style } => (style, None),
    };
    let q = matmul(x_q, &w.wq)?;
    let (kc, vc) = (matmul(content, &w.wk)?, matmul(content, &w.wv)?);
    let (ks, vs) = (matmul(style, &w.wk)?, matmul(style, &w.wv)?);
    let dk = q.cols() / heads;
    let joined = split_heads(&q, heads, |h, qh| {
        let block = |m: &Matrix| m.col_block(h * dk, dk);
        match alpha {
            Some(a) => blended_attention(qh, &block(&kc), &block(&vc), &block(&ks), &block(&vs), a, dk),
            None => inject_token_concat(qh, &block(&kc), &block(&vc), &block(&ks), &block(&vs), dk),
        }
    })?;
    matmul(&joined, &w.wo)
}

/// Runs the decoder. Layers with index `>= L − K` use the configured
/// injection mode in their cross-attention; every other sublayer is the
/// plain unstylized computation.
pub fn decode(
    content: &TokenSequence,
    style: Option<&TokenSequence>,
    cfg: &StyleConfig,
    w: &DecoderWeights,
) -> Result<Triplane> {
    let d = w.dims;
    cfg.validate(d.layers)?;
    ensure!(
        content.dim() == d.dim,
        "content tokens have width {}, decoder expects {}",
        content.dim(),
        d.dim
    );
    if let Some(s) = style {
        ensure!(
            s.dim() == d.dim,
            "style tokens have width {}, decoder expects {}",
            s.dim(),
            d.dim
        );
    }
    let style = match (style, cfg.inject_layers) {
        (_, 0) => None,
        (Some(s), _) => Some(s),
        (None, k) => return Err(invalid!("style injection into {k} layers needs style tokens")),
    };

    let blended_tokens = match (style, cfg.mode) {
        (Some(s), InjectionMode::EmbeddingBlend) => Some(inject_embedding_blend(content, s, cfg.alpha)?),
        _ => None,
    };
    let injected = match (style, cfg.mode) {
        (None, _) => CrossSource::Content,
        (Some(s), InjectionMode::BlendedAttention) => CrossSource::Blended {
            style: s.tokens(),
            alpha: cfg.alpha,
        },
        (Some(s), InjectionMode::TokenConcat) => CrossSource::Concat { style: s.tokens() },
        (Some(_), InjectionMode::EmbeddingBlend) => CrossSource::Embedding {
            blended: blended_tokens.as_ref().expect("computed above").tokens(),
        },
    };

    let first_injected = d.layers - cfg.inject_layers;
    let mut x = w.triplane_token_init.add(&w.triplane_positional_embedding)?;
    for (i, layer) in w.layers.iter().enumerate() {
        let source = if i >= first_injected {
            &injected
        } else {
            &CrossSource::Content
        };
        let n = layer.norm_cross.apply(&x)?;
        x.add_assign(&cross_attention(&layer.cross, &n, content.tokens(), source, d.heads)?)?;
        let n = layer.norm_self.apply(&x)?;
        x.add_assign(&multi_head_attention(&layer.self_attn, &n, &n, d.heads)?)?;
        let n = layer.norm_mlp.apply(&x)?;
        x.add_assign(&layer.mlp.apply(&n)?)?;
    }
    let features = matmul(&w.final_norm.apply(&x)?, &w.plane_head)?;
    Triplane::from_tokens(&features, d.res)
}
