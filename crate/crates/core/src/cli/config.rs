//! Plain-text `key = value` run configuration.

use std::path::{Path, PathBuf};

use crate::decoder::{InjectionMode, DEFAULT_ALPHA, DEFAULT_INJECT_LAYERS, DEFAULT_LAYERS};
use crate::error::{ensure, Error, Result};
use crate::geometry::{DEFAULT_F_SCORE_TAU, DEFAULT_SURFACE_POINTS};
use crate::harness::{ColorFn, Shape, StyleKind};
use crate::numerics::vec3::Vec3;
use crate::renderer::WHITE;

/// Offsets added to a base seed to derive independent random streams.
pub mod stream {
    pub const ENCODER: u64 = 1;
    pub const DECODER: u64 = 2;
    pub const FIELD: u64 = 3;
    pub const EXTRACTOR: u64 = 4;
    pub const SURFACE: u64 = 5;
    pub const STYLE_IMAGE: u64 = 6;
    pub const SCENE: u64 = 7;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub alpha: f64,
    pub inject_layers: usize,
    pub mode: InjectionMode,
    pub layer_count: usize,
    pub triplane_res: usize,
    pub grid_res: usize,
    pub image_size: usize,
    pub n_surface_points: usize,
    pub f_score_tau: f64,
    pub n_ray_samples: usize,
    pub background: Vec3,
    pub turntable_views: usize,
    pub field_gain: f64,
    pub scene: String,
    pub scene_color: String,
    pub style_kind: StyleKind,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            alpha: DEFAULT_ALPHA,
            inject_layers: DEFAULT_INJECT_LAYERS,
            mode: InjectionMode::BlendedAttention,
            layer_count: DEFAULT_LAYERS,
            triplane_res: 16,
            grid_res: 64,
            image_size: 64,
            n_surface_points: DEFAULT_SURFACE_POINTS,
            f_score_tau: DEFAULT_F_SCORE_TAU,
            n_ray_samples: 48,
            background: WHITE,
            turntable_views: 8,
            field_gain: 4.0,
            scene: "torus".into(),
            scene_color: "checker".into(),
            style_kind: StyleKind::Stripes,
            out_dir: PathBuf::from("out"),
        }
    }
}

const KEYS: [&str; 18] = [
    "seed",
    "alpha",
    "inject_layers",
    "mode",
    "layer_count",
    "triplane_res",
    "grid_res",
    "image_size",
    "n_surface_points",
    "f_score_tau",
    "n_ray_samples",
    "background",
    "turntable_views",
    "field_gain",
    "scene",
    "scene_color",
    "style_kind",
    "out_dir",
];

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.style().validate(self.layer_count)?;
        ensure!(self.layer_count >= 1, "layer_count must be positive");
        ensure!(self.triplane_res >= 2, "triplane_res must be at least 2");
        ensure!(self.grid_res >= 2, "grid_res must be at least 2");
        ensure!(self.image_size >= 1, "image_size must be positive");
        ensure!(self.n_surface_points >= 1, "n_surface_points must be positive");
        ensure!(
            self.f_score_tau > 0.0 && self.f_score_tau.is_finite(),
            "f_score_tau must be positive"
        );
        ensure!(self.n_ray_samples >= 2, "n_ray_samples must be at least 2");
        ensure!(
            self.background.iter().all(|c| (0.0..=1.0).contains(c)),
            "background components must lie in [0, 1]"
        );
        ensure!(self.turntable_views >= 1, "turntable_views must be positive");
        ensure!(
            self.field_gain > 0.0 && self.field_gain.is_finite(),
            "field_gain must be positive"
        );
        Shape::by_name(&self.scene)?;
        self.scene_color.parse::<ColorFn>()?;
        Ok(())
    }

    pub fn style(&self) -> crate::decoder::StyleConfig {
        crate::decoder::StyleConfig {
            alpha: self.alpha,
            inject_layers: self.inject_layers,
            mode: self.mode,
        }
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.value_of(key));
            out.push('\n');
        }
        out
    }

    /// Text form of one field, as written by [`RunConfig::serialize`].
    pub fn value_of(&self, key: &str) -> String {
        match key {
            "seed" => self.seed.to_string(),
            "alpha" => format!("{:?}", self.alpha),
            "inject_layers" => self.inject_layers.to_string(),
            "mode" => self.mode.name().to_string(),
            "layer_count" => self.layer_count.to_string(),
            "triplane_res" => self.triplane_res.to_string(),
            "grid_res" => self.grid_res.to_string(),
            "image_size" => self.image_size.to_string(),
            "n_surface_points" => self.n_surface_points.to_string(),
            "f_score_tau" => format!("{:?}", self.f_score_tau),
            "n_ray_samples" => self.n_ray_samples.to_string(),
            "background" => self.background.map(|c| format!("{c:?}")).join(","),
            "turntable_views" => self.turntable_views.to_string(),
            "field_gain" => format!("{:?}", self.field_gain),
            "scene" => self.scene.clone(),
            "scene_color" => self.scene_color.clone(),
            "style_kind" => self.style_kind.name().to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => unreachable!("unknown config key {key}"),
        }
    }

    /// Sets one field from its text form. Failures are reported as plain
    /// messages so callers can attach a location.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse '{v}'"))
        }
        match key {
            "seed" => self.seed = num(value)?,
            "alpha" => self.alpha = num(value)?,
            "inject_layers" => self.inject_layers = num(value)?,
            "mode" => self.mode = value.parse().map_err(|e: Error| e.to_string())?,
            "layer_count" => self.layer_count = num(value)?,
            "triplane_res" => self.triplane_res = num(value)?,
            "grid_res" => self.grid_res = num(value)?,
            "image_size" => self.image_size = num(value)?,
            "n_surface_points" => self.n_surface_points = num(value)?,
            "f_score_tau" => self.f_score_tau = num(value)?,
            "n_ray_samples" => self.n_ray_samples = num(value)?,
            "background" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(format!("background needs 3 components, got '{value}'"));
                }
                for (c, p) in self.background.iter_mut().zip(parts) {
                    *c = num(p)?;
                }
            }
            "turntable_views" => self.turntable_views = num(value)?,
            "field_gain" => self.field_gain = num(value)?,
            "scene" => self.scene = value.to_string(),
            "scene_color" => self.scene_color = value.to_string(),
            "style_kind" => self.style_kind = value.parse().map_err(|e: Error| e.to_string())?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and text
    /// after `#` are ignored.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key = value, got '{line}'")))?;
            cfg.set(key.trim(), value.trim()).map_err(parse_err)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn keys() -> &'static [&'static str] {
        &KEYS
    }
}
