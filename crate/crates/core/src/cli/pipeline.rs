//! Encode, decode, extract, render and score: the shared body of the
//! reconstruct, stylize and sweep commands.

use rayon::prelude::*;

use super::config::{stream, RunConfig};
use super::weights_file::Weights;
use crate::decoder::{decode, StyleConfig, Triplane};
use crate::encoder::{encode_style, encode_views, TokenSequence, DEFAULT_VIEW_COUNT};
use crate::error::{Error, Result};
use crate::geometry::{
    chamfer, density_grid, f_score, marching_cubes, normalize_unit_cube, sample_surface, PointCloud,
    TriangleMesh, DEFAULT_ISO,
};
use crate::harness::{make_style_image, render_ground_truth_views, AnalyticScene, ColorFn, Shape, VIEW_FOV, VIEW_RADIUS};
use crate::image::Image;
use crate::renderer::{render_view, Camera, TriplaneField};
use crate::stylemetric::style_fidelity;

pub const TURNTABLE_ELEVATION: f64 = 15.0;

pub fn scene_from_config(cfg: &RunConfig) -> Result<AnalyticScene> {
    AnalyticScene::new(
        Shape::by_name(&cfg.scene)?,
        cfg.scene_color.parse::<ColorFn>()?,
        cfg.seed.wrapping_add(stream::SCENE),
    )
}

pub fn scene_views(cfg: &RunConfig) -> Result<Vec<Image>> {
    let scene = scene_from_config(cfg)?;
    Ok(render_ground_truth_views(&scene, cfg.image_size)?
        .into_iter()
        .map(|(img, _)| img)
        .collect())
}

pub fn style_from_config(cfg: &RunConfig) -> Result<Image> {
    make_style_image(cfg.style_kind, cfg.seed.wrapping_add(stream::STYLE_IMAGE), cfg.image_size)
}

/// Extracted mesh plus its normalized surface samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub mesh: TriangleMesh,
    pub points: PointCloud,
}

pub fn extract_surface(tp: &Triplane, w: &Weights, cfg: &RunConfig) -> Result<Surface> {
    let field = TriplaneField::new(tp, &w.field)?;
    let grid = density_grid(&field, cfg.grid_res)?;
    let mesh = marching_cubes(&grid, DEFAULT_ISO);
    if mesh.is_empty() {
        return Err(Error::EmptySurface(format!(
            "density never crosses {DEFAULT_ISO:.4} on the {}³ grid",
            cfg.grid_res
        )));
    }
    let samples = sample_surface(&mesh, cfg.n_surface_points, cfg.seed.wrapping_add(stream::SURFACE))?;
    Ok(Surface {
        mesh,
        points: normalize_unit_cube(&samples)?,
    })
}

pub fn turntable_cameras(cfg: &RunConfig) -> Result<Vec<Camera>> {
    (0..cfg.turntable_views)
        .map(|i| {
            let az = 360.0 * i as f64 / cfg.turntable_views as f64;
            Camera::orbit(VIEW_RADIUS, az, TURNTABLE_ELEVATION, VIEW_FOV, cfg.image_size, cfg.image_size)
        })
        .collect()
}

pub fn render_turntable(tp: &Triplane, w: &Weights, cfg: &RunConfig) -> Result<Vec<Image>> {
    let field = TriplaneField::new(tp, &w.field)?;
    turntable_cameras(cfg)?
        .par_iter()
        .map(|cam| render_view(&field, cam, cfg.n_ray_samples, cfg.background))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub chamfer: f64,
    pub f_score: f64,
    pub style_fidelity: f64,
}

/// Result of one stylized decode compared against the shared baseline.
#[derive(Debug, Clone)]
pub struct StyledRun {
    pub style: StyleConfig,
    pub triplane: Triplane,
    pub surface: Surface,
    pub renders: Vec<Image>,
    pub metrics: Metrics,
}

/// Inputs encoded once and the unstylized decode they produce.
pub struct Pipeline<'a> {
    weights: &'a Weights,
    cfg: RunConfig,
    content: TokenSequence,
    style_tokens: TokenSequence,
    style_image: Image,
    pub base: Triplane,
    pub base_surface: Surface,
}

impl<'a> Pipeline<'a> {
    pub fn new(weights: &'a Weights, cfg: &RunConfig, views: &[Image], style_image: Image) -> Result<Self> {
        cfg.validate()?;
        weights.check_config(cfg)?;
        let content = encode_views(views, &weights.encoder, DEFAULT_VIEW_COUNT)?;
        let style_tokens = encode_style(&style_image, &weights.encoder)?;
        let base = decode(&content, None, &StyleConfig::unstylized(), &weights.decoder)?;
        let base_surface = extract_surface(&base, weights, cfg)?;
        Ok(Self {
            weights,
            cfg: cfg.clone(),
            content,
            style_tokens,
            style_image,
            base,
            base_surface,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn style_image(&self) -> &Image {
        &self.style_image
    }

    pub fn render_base(&self) -> Result<Vec<Image>> {
        render_turntable(&self.base, self.weights, &self.cfg)
    }

    pub fn stylize(&self, style: StyleConfig) -> Result<StyledRun> {
        style.validate(self.cfg.layer_count)?;
        let triplane = decode(&self.content, Some(&self.style_tokens), &style, &self.weights.decoder)?;
        let surface = extract_surface(&triplane, self.weights, &self.cfg)?;
        let renders = render_turntable(&triplane, self.weights, &self.cfg)?;
        let metrics = Metrics {
            chamfer: chamfer(&surface.points, &self.base_surface.points)?,
            f_score: f_score(&surface.points, &self.base_surface.points, self.cfg.f_score_tau)?,
            style_fidelity: style_fidelity(&renders, &self.style_image, &self.weights.extractor)?,
        };
        Ok(StyledRun {
            style,
            triplane,
            surface,
            renders,
            metrics,
        })
    }
}
