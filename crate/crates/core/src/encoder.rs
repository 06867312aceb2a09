//! Small vision transformer that turns images into patch-token sequences.

use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::image::Image;
use crate::numerics::{matmul, Matrix, Rng};
use crate::transformer::{residual_scale, EncoderBlock, NormParams};

pub const DEFAULT_VIEW_COUNT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub image_size: usize,
    pub patch: usize,
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch: 8,
            dim: 64,
            blocks: 2,
            heads: 4,
            mlp_hidden: 256,
        }
    }
}

impl EncoderDims {
    pub fn patches_per_side(&self) -> usize {
        self.image_size / self.patch
    }

    pub fn tokens_per_image(&self) -> usize {
        self.patches_per_side() * self.patches_per_side()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.patch >= 1 && self.image_size.is_multiple_of(self.patch),
            "image size {} not divisible by patch {}",
            self.image_size,
            self.patch
        );
        ensure!(
            self.heads >= 1 && self.dim.is_multiple_of(self.heads),
            "encoder width {} not divisible by {} heads",
            self.dim,
            self.heads
        );
        ensure!(self.mlp_hidden >= 1, "encoder MLP width must be positive");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenSource {
    Content,
    Style,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    tokens: Matrix,
    source: TokenSource,
}

impl TokenSequence {
    pub fn new(tokens: Matrix, source: TokenSource) -> Result<Self> {
        ensure!(tokens.rows() >= 1, "token sequence must not be empty");
        ensure!(tokens.is_finite(), "token sequence has non-finite entries");
        Ok(Self { tokens, source })
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    pub fn source(&self) -> TokenSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn with_source(self, source: TokenSource) -> Self {
        Self { source, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub dims: EncoderDims,
    pub patch_projection: Matrix,
    pub positional_embedding: Matrix,
    pub blocks: Vec<EncoderBlock>,
    pub final_norm: NormParams,
}

impl EncoderWeights {
    pub fn zeros(dims: EncoderDims) -> Result<Self> {
        dims.validate()?;
        let patch_len = 3 * dims.patch * dims.patch;
        Ok(Self {
            dims,
            patch_projection: Matrix::zeros(patch_len, dims.dim),
            positional_embedding: Matrix::zeros(dims.tokens_per_image(), dims.dim),
            blocks: (0..dims.blocks)
                .map(|_| EncoderBlock::zeros(dims.dim, dims.mlp_hidden))
                .collect(),
            final_norm: NormParams::identity(dims.dim),
        })
    }

    /// Seeded Gaussian weights with standard deviation `1/sqrt(fan_in)` per
    /// projection, residual output projections scaled down by depth.
    pub fn random(dims: EncoderDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = Rng::new(seed);
        let patch_len = 3 * dims.patch * dims.patch;
        let patch_projection =
            Matrix::gaussian(patch_len, dims.dim, 1.0 / (patch_len as f64).sqrt(), &mut rng);
        let positional_embedding = Matrix::gaussian(
            dims.tokens_per_image(),
            dims.dim,
            1.0 / (dims.dim as f64).sqrt(),
            &mut rng,
        );
        let scale = residual_scale(2 * dims.blocks);
        let blocks = (0..dims.blocks)
            .map(|_| EncoderBlock::random(dims.dim, dims.mlp_hidden, scale, &mut rng))
            .collect();
        Ok(Self {
            dims,
            patch_projection,
            positional_embedding,
            blocks,
            final_norm: NormParams::identity(dims.dim),
        })
    }

    pub(crate) fn tensors(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.patch_projection, &self.positional_embedding];
        for b in &self.blocks {
            v.extend(b.tensors());
        }
        v.extend(self.final_norm.tensors());
        v
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.patch_projection, &mut self.positional_embedding];
        for b in &mut self.blocks {
            v.extend(b.tensors_mut());
        }
        v.extend(self.final_norm.tensors_mut());
        v
    }
}

/// Cuts an image into `patch × patch` tiles.
///
/// Rows follow the raster order of the tiles. Within a row, pixels follow
/// raster order inside the tile with the three channels interleaved, so
/// entry `(py * patch + px) * 3 + ch` holds channel `ch` of the tile pixel
/// at `(px, py)`.
pub fn patchify(img: &Image, patch: usize) -> Result<Matrix> {
    ensure!(patch >= 1, "patch size must be positive");
    ensure!(
        img.width().is_multiple_of(patch) && img.height().is_multiple_of(patch),
        "image {}x{} not divisible by patch {patch}",
        img.width(),
        img.height()
    );
    let (nx, ny) = (img.width() / patch, img.height() / patch);
    let len = 3 * patch * patch;
    let mut out = Matrix::zeros(nx * ny, len);
    for ty in 0..ny {
        for tx in 0..nx {
            let row = out.row_mut(ty * nx + tx);
            for py in 0..patch {
                for px in 0..patch {
                    let c = img.get(tx * patch + px, ty * patch + py);
                    let at = (py * patch + px) * 3;
                    row[at..at + 3].copy_from_slice(&c);
                }
            }
        }
    }
    Ok(out)
}

/// Encodes one image into patch tokens (no class token), tagged as content.
pub fn encode(img: &Image, w: &EncoderWeights) -> Result<TokenSequence> {
    let d = w.dims;
    ensure!(
        img.width() == d.image_size && img.height() == d.image_size,
        "encoder expects {0}x{0} images, got {1}x{2}",
        d.image_size,
        img.width(),
        img.height()
    );
    let patches = patchify(img, d.patch)?;
    let mut x = matmul(&patches, &w.patch_projection)?;
    x.add_assign(&w.positional_embedding)?;
    for block in &w.blocks {
        x = block.forward(&x, d.heads)?;
    }
    TokenSequence::new(w.final_norm.apply(&x)?, TokenSource::Content)
}

/// Encodes a style reference image.
pub fn encode_style(img: &Image, w: &EncoderWeights) -> Result<TokenSequence> {
    Ok(encode(img, w)?.with_source(TokenSource::Style))
}

/// Encodes `view_count` views and concatenates their tokens in view order.
pub fn encode_views(views: &[Image], w: &EncoderWeights, view_count: usize) -> Result<TokenSequence> {
    ensure!(
        views.len() == view_count,
        "expected {view_count} views, got {}",
        views.len()
    );
    let per_view = views
        .par_iter()
        .map(|v| encode(v, w))
        .collect::<Result<Vec<_>>>()?;
    let blocks: Vec<&Matrix> = per_view.iter().map(TokenSequence::tokens).collect();
    TokenSequence::new(Matrix::vcat(&blocks)?, TokenSource::Content)
}
