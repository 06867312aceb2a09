//! Gram-matrix style fidelity over a seeded convolutional feature pyramid.

use crate::error::{ensure, Result};
use crate::image::Image;
use crate::numerics::{Matrix, Rng};

/// One `conv3×3 → ReLU → average-pool` stage. `kernels` is
/// `out_channels × (in_channels·9)`, each row laid out as `[in_ch][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStage {
    pub kernels: Matrix,
    pub pool: usize,
}

impl ConvStage {
    pub fn in_channels(&self) -> usize {
        self.kernels.cols() / 9
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub stages: Vec<ConvStage>,
    pub seed: u64,
}

pub const DEFAULT_STAGE_CHANNELS: [usize; 4] = [16, 32, 32, 64];
pub const DEFAULT_POOL: usize = 2;

impl FeatureExtractor {
    pub fn zeros(channels: &[usize], pool: usize, seed: u64) -> Result<Self> {
        ensure!(channels.len() >= 2, "feature extractor needs at least 2 stages");
        ensure!(pool >= 1, "pooling factor must be positive");
        let mut c_in = 3;
        let stages = channels
            .iter()
            .map(|&c_out| {
                let s = ConvStage {
                    kernels: Matrix::zeros(c_out, c_in * 9),
                    pool,
                };
                c_in = c_out;
                s
            })
            .collect();
        Ok(Self { stages, seed })
    }

    /// He-initialized kernels drawn from `seed`.
    pub fn random(channels: &[usize], pool: usize, seed: u64) -> Result<Self> {
        let mut fx = Self::zeros(channels, pool, seed)?;
        let mut rng = Rng::new(seed);
        for stage in &mut fx.stages {
            let fan_in = stage.kernels.cols();
            stage.kernels = Matrix::gaussian(
                stage.out_channels(),
                fan_in,
                (2.0 / fan_in as f64).sqrt(),
                &mut rng,
            );
        }
        Ok(fx)
    }

    pub fn total_pool(&self) -> usize {
        self.stages.iter().map(|s| s.pool).product()
    }

    pub(crate) fn tensors(&self) -> Vec<&Matrix> {
        self.stages.iter().map(|s| &s.kernels).collect()
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.stages.iter_mut().map(|s| &mut s.kernels).collect()
    }
}

/// Channel-major feature map: value `(c, y, x)` at `(c·H + y)·W + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == channels * height * width,
            "feature map {channels}x{height}x{width} needs {} values, got {}",
            channels * height * width,
            data.len()
        );
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    fn from_image(img: &Image) -> Self {
        let (w, h) = (img.width(), img.height());
        let mut data = vec![0.0; 3 * w * h];
        for (i, px) in img.pixels().iter().enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = px[c];
            }
        }
        Self {
            channels: 3,
            height: h,
            width: w,
            data,
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

fn conv_relu_pool(input: &FeatureMap, stage: &ConvStage) -> FeatureMap {
    let (h, w) = (input.height, input.width);
    let c_out = stage.out_channels();
    let mut conv = vec![0.0; c_out * h * w];
    for y in 0..h {
        for x in 0..w {
            // gather the reflected 3×3 neighbourhood once per pixel
            let mut patch = Vec::with_capacity(input.channels * 9);
            for c in 0..input.channels {
                for ky in 0..3 {
                    let sy = reflect(y as isize + ky as isize - 1, h);
                    for kx in 0..3 {
                        let sx = reflect(x as isize + kx as isize - 1, w);
                        patch.push(input.get(c, sy, sx));
                    }
                }
            }
            for o in 0..c_out {
                let acc = crate::numerics::dot(stage.kernels.row(o), &patch);
                conv[(o * h + y) * w + x] = acc.max(0.0);
            }
        }
    }
    let p = stage.pool;
    let (ph, pw) = (h / p, w / p);
    let inv = 1.0 / (p * p) as f64;
    let mut pooled = vec![0.0; c_out * ph * pw];
    for o in 0..c_out {
        for y in 0..ph {
            for x in 0..pw {
                let mut acc = 0.0;
                for dy in 0..p {
                    for dx in 0..p {
                        acc += conv[(o * h + y * p + dy) * w + x * p + dx];
                    }
                }
                pooled[(o * ph + y) * pw + x] = acc * inv;
            }
        }
    }
    FeatureMap {
        channels: c_out,
        height: ph,
        width: pw,
        data: pooled,
    }
}

/// One feature map per stage, reflection padding at the borders.
pub fn extract_features(img: &Image, fx: &FeatureExtractor) -> Result<Vec<FeatureMap>> {
    let total = fx.total_pool();
    ensure!(
        img.width().is_multiple_of(total) && img.height().is_multiple_of(total),
        "image {}x{} not divisible by cumulative pooling {total}",
        img.width(),
        img.height()
    );
    ensure!(
        img.width() >= 2 * total && img.height() >= 2 * total,
        "image {}x{} too small for reflection padding after pooling by {total}",
        img.width(),
        img.height()
    );
    let mut maps = Vec::with_capacity(fx.stages.len());
    let mut current = FeatureMap::from_image(img);
    for stage in &fx.stages {
        ensure!(
            stage.in_channels() == current.channels,
            "stage expects {} input channels, got {}",
            stage.in_channels(),
            current.channels
        );
        current = conv_relu_pool(&current, stage);
        maps.push(current.clone());
    }
    Ok(maps)
}

/// Sum whose result does not depend on the order of `terms`.
fn order_free_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// `G = F·Fᵀ / (C·H·W)` with `F` the `C × (H·W)` unrolled map.
///
/// Each entry is summed over positions in sorted order and the lower
/// triangle is mirrored from the upper, so `G` is exactly symmetric and
/// exactly invariant to any permutation of spatial positions.
pub fn gram(fm: &FeatureMap) -> Matrix {
    let c = fm.channels;
    let n = fm.height * fm.width;
    let norm = 1.0 / (c * n) as f64;
    let mut g = Matrix::zeros(c, c);
    let mut terms = vec![0.0; n];
    for a in 0..c {
        for b in a..c {
            for ((t, x), y) in terms.iter_mut().zip(fm.channel(a)).zip(fm.channel(b)) {
                *t = x * y;
            }
            let v = order_free_sum(&mut terms) * norm;
            g.set(a, b, v);
            g.set(b, a, v);
        }
    }
    g
}

fn frobenius_distance(a: &Matrix, b: &Matrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean over renders and stages of the Frobenius distance between each
/// render's Gram matrices and the style image's.
pub fn style_fidelity(renders: &[Image], style: &Image, fx: &FeatureExtractor) -> Result<f64> {
    ensure!(!renders.is_empty(), "style fidelity needs at least one render");
    let style_grams: Vec<Matrix> = extract_features(style, fx)?.iter().map(gram).collect();
    let mut per_render = renders
        .iter()
        .map(|r| {
            let maps = extract_features(r, fx)?;
            let total: f64 = maps
                .iter()
                .zip(&style_grams)
                .map(|(m, gs)| frobenius_distance(&gram(m), gs))
                .sum();
            Ok(total / maps.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(order_free_sum(&mut per_render) / renders.len() as f64)
}
