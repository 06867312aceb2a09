//! Analytic scenes and procedural style images for end-to-end runs.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{ensure, invalid, Error, Result};
use crate::geometry::PointCloud;
use crate::image::Image;
use crate::numerics::vec3::{self, Vec3};
use crate::numerics::Rng;
use crate::renderer::{intersect_box, Camera, RadianceField, RadianceSample, WHITE};

pub const SCENE_BOUND: f64 = 0.8;
pub const VIEW_RADIUS: f64 = 2.2;
pub const VIEW_AZIMUTHS: [f64; 6] = [0.0, 60.0, 120.0, 180.0, 240.0, 300.0];
pub const VIEW_ELEVATIONS: [f64; 2] = [20.0, -10.0];
pub const VIEW_FOV: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    /// Axis-aligned box centred at the origin.
    Box { half: Vec3 },
    /// Torus around the y axis.
    Torus { major: f64, minor: f64 },
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Sphere { .. } => "sphere",
            Shape::Box { .. } => "box",
            Shape::Torus { .. } => "torus",
        }
    }

    /// Stock sizes used by the CLI.
    pub fn by_name(name: &str) -> Result<Shape> {
        match name {
            "sphere" => Ok(Shape::Sphere { radius: 0.6 }),
            "box" => Ok(Shape::Box { half: [0.5, 0.4, 0.45] }),
            "torus" => Ok(Shape::Torus { major: 0.5, minor: 0.22 }),
            other => Err(invalid!("unknown shape '{other}' (expected sphere, box or torus)")),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Sphere { radius } => radius > 0.0 && radius <= SCENE_BOUND,
            Shape::Box { half } => half.iter().all(|&h| h > 0.0 && h <= SCENE_BOUND),
            Shape::Torus { major, minor } => {
                minor > 0.0 && minor < major && major + minor <= SCENE_BOUND
            }
        };
        ensure!(ok, "{self:?} does not fit inside [-{SCENE_BOUND}, {SCENE_BOUND}]³");
        Ok(())
    }

    /// Exact signed distance.
    pub fn sdf(&self, p: Vec3) -> f64 {
        match *self {
            Shape::Sphere { radius } => vec3::norm(p) - radius,
            Shape::Box { half } => {
                let q = [0, 1, 2].map(|a| p[a].abs() - half[a]);
                let outside = vec3::norm(q.map(|v| v.max(0.0)));
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            Shape::Torus { major, minor } => {
                let ring = p[0].hypot(p[2]) - major;
                ring.hypot(p[1]) - minor
            }
        }
    }

    /// Distance along a unit-direction ray to the first surface hit.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        match *self {
            Shape::Sphere { radius } => {
                let b = vec3::dot(origin, dir);
                let c = vec3::dot(origin, origin) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [-b - s, -b + s].into_iter().find(|&t| t >= 0.0)
            }
            Shape::Box { half } => {
                let lo = half.map(|h| -h);
                slab(origin, dir, lo, half).map(|(t0, _)| t0)
            }
            Shape::Torus { major, minor } => {
                let r = major + minor;
                let (t0, t1) = slab(origin, dir, [-r, -minor, -r], [r, minor, r])?;
                // sphere tracing on the exact distance
                let mut t = t0;
                for _ in 0..512 {
                    let d = self.sdf(vec3::add(origin, vec3::scale(dir, t)));
                    if d < 1e-9 {
                        return Some(t);
                    }
                    t += d;
                    if t > t1 {
                        return None;
                    }
                }
                None
            }
        }
    }
}

fn slab(origin: Vec3, dir: Vec3, lo: Vec3, hi: Vec3) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-300 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (u, v) = ((lo[a] - origin[a]) / dir[a], (hi[a] - origin[a]) / dir[a]);
        t0 = t0.max(u.min(v));
        t1 = t1.min(u.max(v));
    }
    (t0 <= t1).then_some((t0, t1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorFn {
    Checker,
    Gradient,
    Bands,
}

impl ColorFn {
    pub fn name(self) -> &'static str {
        match self {
            ColorFn::Checker => "checker",
            ColorFn::Gradient => "gradient",
            ColorFn::Bands => "bands",
        }
    }
}

impl FromStr for ColorFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checker" => Ok(ColorFn::Checker),
            "gradient" => Ok(ColorFn::Gradient),
            "bands" => Ok(ColorFn::Bands),
            other => Err(invalid!("unknown color function '{other}' (expected checker, gradient or bands)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticScene {
    shape: Shape,
    color_fn: ColorFn,
    seed: u64,
    palette: [Vec3; 4],
}

impl AnalyticScene {
    pub fn new(shape: Shape, color_fn: ColorFn, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = Rng::new(seed);
        let palette = [(); 4].map(|_| [(); 3].map(|_| 0.1 + 0.8 * rng.uniform()));
        Ok(Self {
            shape,
            color_fn,
            seed,
            palette,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn color_fn(&self) -> ColorFn {
        self.color_fn
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Procedural surface color at `p`.
    pub fn color(&self, p: Vec3) -> Vec3 {
        let pal = &self.palette;
        match self.color_fn {
            ColorFn::Checker => {
                let parity: i64 = p.iter().map(|&v| (4.0 * (v + 1.0)).floor() as i64).sum();
                pal[parity.rem_euclid(2) as usize]
            }
            ColorFn::Gradient => {
                let t = ((p[1] + 1.0) * 0.5).clamp(0.0, 1.0);
                [0, 1, 2].map(|c| (1.0 - t) * pal[0][c] + t * pal[1][c])
            }
            ColorFn::Bands => {
                let band = (5.0 * (p[1] + 1.0)).floor() as i64;
                pal[band.rem_euclid(4) as usize]
            }
        }
    }

    /// Flat-shaded color seen along a ray, or `None` on a miss.
    pub fn trace(&self, origin: Vec3, dir: Vec3) -> Option<Vec3> {
        let t = self.shape.intersect(origin, dir)?;
        Some(self.color(vec3::add(origin, vec3::scale(dir, t))))
    }
}

/// The fixed six-view rig shared by ground truth and reconstruction.
pub fn view_cameras(resolution: usize) -> Result<Vec<Camera>> {
    VIEW_AZIMUTHS
        .iter()
        .enumerate()
        .map(|(i, &az)| {
            Camera::orbit(
                VIEW_RADIUS,
                az,
                VIEW_ELEVATIONS[i % 2],
                VIEW_FOV,
                resolution,
                resolution,
            )
        })
        .collect()
}

/// Ray-traced views of `scene` over a white background.
pub fn render_ground_truth_views(scene: &AnalyticScene, resolution: usize) -> Result<Vec<(Image, Camera)>> {
    ensure!(resolution >= 1, "resolution must be positive");
    view_cameras(resolution)?
        .into_par_iter()
        .map(|cam| {
            let mut px = Vec::with_capacity(resolution * resolution);
            for y in 0..cam.height {
                for x in 0..cam.width {
                    let dir = cam.pixel_direction(x, y);
                    px.push(scene.trace(cam.position, dir).unwrap_or(WHITE));
                }
            }
            Ok((Image::from_pixels(cam.width, cam.height, px)?, cam))
        })
        .collect()
}

/// Volumetric stand-in for a scene: constant `density` inside the shape,
/// empty outside, colored by the scene's color function.
#[derive(Debug, Clone)]
pub struct OpaqueSceneField<'a> {
    pub scene: &'a AnalyticScene,
    pub density: f64,
}

impl RadianceField for OpaqueSceneField<'_> {
    fn sample(&self, p: Vec3) -> RadianceSample {
        let inside = self.scene.shape.sdf(p) <= 0.0;
        RadianceSample {
            sigma: if inside { self.density } else { 0.0 },
            rgb: self.scene.color(p),
        }
    }
}

/// Whether the ray through pixel `(x, y)` of `cam` hits the scene and the
/// unit box the renderer marches through.
pub fn silhouette_hit(scene: &AnalyticScene, cam: &Camera, x: usize, y: usize) -> bool {
    let dir = cam.pixel_direction(x, y);
    intersect_box(cam.position, dir, -1.0, 1.0).is_some() && scene.shape.intersect(cam.position, dir).is_some()
}

/// `n` area-uniform points on the scene surface.
pub fn sample_scene_surface(scene: &AnalyticScene, n: usize, seed: u64) -> Result<PointCloud> {
    ensure!(n >= 1, "need at least one surface point");
    let mut rng = Rng::new(seed);
    let points = (0..n).map(|_| sample_shape(&scene.shape, &mut rng)).collect();
    PointCloud::new(points)
}

fn sample_shape(shape: &Shape, rng: &mut Rng) -> Vec3 {
    match *shape {
        Shape::Sphere { radius } => loop {
            let g = [rng.gaussian(), rng.gaussian(), rng.gaussian()];
            let n = vec3::norm(g);
            if n > 1e-12 {
                return vec3::scale(g, radius / n);
            }
        },
        Shape::Box { half } => {
            let [hx, hy, hz] = half;
            // face pairs normal to x, y, z
            let areas = [hy * hz, hx * hz, hx * hy];
            let total: f64 = areas.iter().sum();
            let mut pick = rng.uniform() * total;
            let mut axis = 2;
            for (a, &area) in areas.iter().enumerate() {
                if pick < area {
                    axis = a;
                    break;
                }
                pick -= area;
            }
            let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            let mut p = [0.0; 3];
            for a in 0..3 {
                p[a] = if a == axis {
                    sign * half[a]
                } else {
                    (2.0 * rng.uniform() - 1.0) * half[a]
                };
            }
            p
        }
        Shape::Torus { major, minor } => loop {
            let phi = std::f64::consts::TAU * rng.uniform();
            let theta = std::f64::consts::TAU * rng.uniform();
            // area element is proportional to the distance from the axis
            let ring = major + minor * theta.cos();
            if rng.uniform() * (major + minor) <= ring {
                return [ring * phi.cos(), minor * theta.sin(), ring * phi.sin()];
            }
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StyleKind {
    Stripes,
    Noise,
    Palette,
}

impl StyleKind {
    pub fn name(self) -> &'static str {
        match self {
            StyleKind::Stripes => "stripes",
            StyleKind::Noise => "noise",
            StyleKind::Palette => "palette",
        }
    }
}

impl fmt::Display for StyleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StyleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stripes" => Ok(StyleKind::Stripes),
            "noise" => Ok(StyleKind::Noise),
            "palette" => Ok(StyleKind::Palette),
            other => Err(invalid!("unknown style kind '{other}' (expected stripes, noise or palette)")),
        }
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn random_color(rng: &mut Rng) -> Vec3 {
    [(); 3].map(|_| quantize(rng.uniform()))
}

/// Procedural style texture. Channel values are multiples of 1/255, so the
/// image survives a PPM round trip unchanged.
pub fn make_style_image(kind: StyleKind, seed: u64, resolution: usize) -> Result<Image> {
    ensure!(resolution >= 1, "resolution must be positive");
    let mut rng = Rng::new(seed);
    let n = resolution;
    let mut img = Image::new(n, n, WHITE)?;
    match kind {
        StyleKind::Stripes => {
            let a = random_color(&mut rng);
            let mut b = random_color(&mut rng);
            while b == a {
                b = random_color(&mut rng);
            }
            let width = 2 + rng.below(6);
            for y in 0..n {
                for x in 0..n {
                    img.set(x, y, if (x / width).is_multiple_of(2) { a } else { b });
                }
            }
        }
        StyleKind::Noise => {
            const CELL: usize = 4;
            let lattice = n / CELL + 2;
            let nodes: Vec<Vec3> = (0..lattice * lattice)
                .map(|_| [(); 3].map(|_| rng.uniform()))
                .collect();
            for y in 0..n {
                for x in 0..n {
                    let (gx, gy) = (x / CELL, y / CELL);
                    let (fx, fy) = ((x % CELL) as f64 / CELL as f64, (y % CELL) as f64 / CELL as f64);
                    let node = |i: usize, j: usize| nodes[j * lattice + i];
                    let c = [0, 1, 2].map(|c| {
                        let top = (1.0 - fx) * node(gx, gy)[c] + fx * node(gx + 1, gy)[c];
                        let bottom = (1.0 - fx) * node(gx, gy + 1)[c] + fx * node(gx + 1, gy + 1)[c];
                        let smooth = (1.0 - fy) * top + fy * bottom;
                        quantize(0.8 * smooth + 0.2 * rng.uniform())
                    });
                    img.set(x, y, c);
                }
            }
        }
        StyleKind::Palette => {
            let palette: Vec<Vec3> = (0..5).map(|_| random_color(&mut rng)).collect();
            let block = 4 + rng.below(5);
            let blocks = n.div_ceil(block);
            let layout: Vec<usize> = (0..blocks * blocks).map(|_| rng.below(5)).collect();
            for y in 0..n {
                for x in 0..n {
                    img.set(x, y, palette[layout[(y / block) * blocks + x / block]]);
                }
            }
        }
    }
    Ok(img)
}
