//! Triplane radiance-field queries and front-to-back volumetric rendering.

use rayon::prelude::*;

use crate::decoder::{PlaneAxis, Triplane};
use crate::error::{ensure, Result};
use crate::image::Image;
use crate::numerics::vec3::{self, Vec3};
use crate::numerics::{sigmoid, softplus, Matrix, Rng};

pub const WHITE: Vec3 = [1.0, 1.0, 1.0];

/// Density and color at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadianceSample {
    pub sigma: f64,
    pub rgb: Vec3,
}

/// Anything that can be queried for density and color in world space.
pub trait RadianceField: Sync {
    fn sample(&self, p: Vec3) -> RadianceSample;
}

/// MLP decoding concatenated plane features `[f_xy, f_yz, f_xz]` (width
/// `3·C`) into a density logit and three color logits.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMlpWeights {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl FieldMlpWeights {
    pub fn zeros(channels: usize, hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros(3 * channels, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(hidden, 4),
            b2: Matrix::zeros(1, 4),
        }
    }

    /// Seeded weights. The output layer uses gain `output_gain / sqrt(hidden)`.
    /// Output biases cancel the mean the ReLU layer feeds forward for
    /// standard-normal features (`E[relu(h)] = 1/sqrt(2π)`), so untrained
    /// fields straddle density `density_center` and color 0.5.
    pub fn random(channels: usize, hidden: usize, output_gain: f64, density_center: f64, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let in_w = 3 * channels;
        let w1 = Matrix::gaussian(in_w, hidden, 1.0 / (in_w as f64).sqrt(), &mut rng);
        let w2 = Matrix::gaussian(hidden, 4, output_gain / (hidden as f64).sqrt(), &mut rng);
        let relu_mean = 1.0 / std::f64::consts::TAU.sqrt();
        let density_logit = density_center.exp_m1().ln();
        let b2 = (0..4)
            .map(|o| {
                let drift = relu_mean * (0..hidden).map(|j| w2.get(j, o)).sum::<f64>();
                let target = if o == 0 { density_logit } else { 0.0 };
                (target - drift) as f32 as f64
            })
            .collect();
        Self {
            w1,
            b1: Matrix::zeros(1, hidden),
            w2,
            b2: Matrix::from_vec(1, 4, b2).expect("4 outputs"),
        }
    }

    pub fn channels(&self) -> usize {
        self.w1.rows() / 3
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub(crate) fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn forward(&self, features: &[f64]) -> [f64; 4] {
        let hidden = self.hidden();
        let mut h = self.b1.data().to_vec();
        for (i, &f) in features.iter().enumerate() {
            let row = self.w1.row(i);
            for (hv, w) in h.iter_mut().zip(row) {
                *hv += f * w;
            }
        }
        let mut out = [0.0; 4];
        out.copy_from_slice(self.b2.data());
        for (j, hv) in h.iter().take(hidden).enumerate() {
            let a = hv.max(0.0);
            for (o, w) in out.iter_mut().zip(self.w2.row(j)) {
                *o += a * w;
            }
        }
        out
    }
}

/// A triplane paired with its decoding MLP.
#[derive(Debug, Clone, Copy)]
pub struct TriplaneField<'a> {
    pub triplane: &'a Triplane,
    pub mlp: &'a FieldMlpWeights,
}

impl<'a> TriplaneField<'a> {
    pub fn new(triplane: &'a Triplane, mlp: &'a FieldMlpWeights) -> Result<Self> {
        ensure!(
            mlp.channels() == triplane.channels(),
            "field MLP expects {} channels per plane, triplane has {}",
            mlp.channels(),
            triplane.channels()
        );
        Ok(Self { triplane, mlp })
    }
}

impl RadianceField for TriplaneField<'_> {
    fn sample(&self, p: Vec3) -> RadianceSample {
        query_field(self.triplane, self.mlp, p)
    }
}

/// Samples XY at (x, y), YZ at (y, z) and XZ at (x, z), concatenates the
/// three feature vectors and decodes them. Points outside [-1, 1]³ are
/// clamped onto the box.
pub fn query_field(tp: &Triplane, mlp: &FieldMlpWeights, p: Vec3) -> RadianceSample {
    let c = tp.channels();
    let [x, y, z] = p.map(|v| v.clamp(-1.0, 1.0));
    let mut features = vec![0.0; 3 * c];
    tp.plane(PlaneAxis::Xy)
        .bilinear_sample_into(x, y, &mut features[..c]);
    tp.plane(PlaneAxis::Yz)
        .bilinear_sample_into(y, z, &mut features[c..2 * c]);
    tp.plane(PlaneAxis::Xz)
        .bilinear_sample_into(x, z, &mut features[2 * c..]);
    let out = mlp.forward(&features);
    RadianceSample {
        sigma: softplus(out[0]),
        rgb: [sigmoid(out[1]), sigmoid(out[2]), sigmoid(out[3])],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64) -> Result<Self> {
        ensure!(
            (vec3::norm(direction) - 1.0).abs() <= 1e-9,
            "ray direction must be unit length"
        );
        ensure!(
            0.0 <= t_near && t_near < t_far,
            "ray interval [{t_near}, {t_far}] is invalid"
        );
        Ok(Self {
            origin,
            direction,
            t_near,
            t_far,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        vec3::add(self.origin, vec3::scale(self.direction, t))
    }
}

/// Slab test against the axis-aligned box `[lo, hi]³`. Returns the parameter
/// interval of the ray inside the box, clipped to `t >= 0`.
pub fn intersect_box(origin: Vec3, direction: Vec3, lo: f64, hi: f64) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if direction[a].abs() < 1e-300 {
            if origin[a] < lo || origin[a] > hi {
                return None;
            }
            continue;
        }
        let inv = 1.0 / direction[a];
        let (mut ta, mut tb) = ((lo - origin[a]) * inv, (hi - origin[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 < t1).then_some((t0, t1))
}

/// Per-sample quantities of one marched ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayTrace {
    /// `T_i · α_i` for each sample.
    pub weights: Vec<f64>,
    /// Transmittance `T_i` in front of each sample.
    pub transmittance: Vec<f64>,
    /// Transmittance left after the last sample.
    pub residual: f64,
    /// Accumulated color, background excluded.
    pub color: Vec3,
}

/// Midpoint quadrature along `[t_near, t_far]` with `n_samples` equal
/// segments: `α_i = 1 − exp(−σ_i δ)`, `T_i = Π_{j<i} (1 − α_j)`.
pub fn march_ray<F: RadianceField + ?Sized>(field: &F, ray: &Ray, n_samples: usize) -> Result<RayTrace> {
    ensure!(n_samples >= 2, "need at least 2 samples per ray, got {n_samples}");
    let delta = (ray.t_far - ray.t_near) / n_samples as f64;
    let mut weights = Vec::with_capacity(n_samples);
    let mut transmittance = Vec::with_capacity(n_samples);
    let mut t_acc = 1.0;
    let mut color = [0.0; 3];
    for i in 0..n_samples {
        let t = ray.t_near + (i as f64 + 0.5) * delta;
        let s = field.sample(ray.at(t));
        let alpha = 1.0 - (-s.sigma * delta).exp();
        let w = t_acc * alpha;
        for (c, v) in color.iter_mut().zip(s.rgb) {
            *c += w * v;
        }
        weights.push(w);
        transmittance.push(t_acc);
        t_acc *= 1.0 - alpha;
    }
    Ok(RayTrace {
        weights,
        transmittance,
        residual: t_acc,
        color,
    })
}

pub fn render_ray<F: RadianceField + ?Sized>(
    field: &F,
    ray: &Ray,
    n_samples: usize,
    background: Vec3,
) -> Result<Vec3> {
    let tr = march_ray(field, ray, n_samples)?;
    Ok([0, 1, 2].map(|c| tr.color[c] + tr.residual * background[c]))
}

/// Pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub vertical_fov: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        position: Vec3,
        look_at: Vec3,
        up: Vec3,
        vertical_fov: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = vec3::sub(look_at, position);
        ensure!(vec3::norm(forward) > 1e-12, "camera position equals look-at point");
        ensure!(
            vec3::norm(vec3::cross(forward, up)) > 1e-9 * vec3::norm(forward) * vec3::norm(up),
            "camera up vector is parallel to the view direction"
        );
        ensure!(
            vertical_fov > 0.0 && vertical_fov < 180.0,
            "vertical field of view must lie in (0, 180) degrees"
        );
        ensure!(width >= 1 && height >= 1, "camera image must be at least 1x1");
        Ok(Self {
            position,
            look_at,
            up,
            vertical_fov,
            width,
            height,
        })
    }

    /// Camera on a sphere of `radius` around the origin, y up. Azimuth 0
    /// looks down −z from +z.
    pub fn orbit(
        radius: f64,
        azimuth_deg: f64,
        elevation_deg: f64,
        vertical_fov: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let position = [
            radius * el.cos() * az.sin(),
            radius * el.sin(),
            radius * el.cos() * az.cos(),
        ];
        Self::new(position, [0.0; 3], [0.0, 1.0, 0.0], vertical_fov, width, height)
    }

    /// Orthonormal (right, up, forward) frame.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = vec3::normalize(vec3::sub(self.look_at, self.position));
        let right = vec3::normalize(vec3::cross(forward, self.up));
        let up = vec3::cross(right, forward);
        (right, up, forward)
    }

    /// Focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.vertical_fov.to_radians()).tan()
    }

    /// Unit direction through the center of pixel `(px, py)`; row 0 is the top.
    pub fn pixel_direction(&self, px: usize, py: usize) -> Vec3 {
        let (right, up, forward) = self.basis();
        let f = self.focal_px();
        let x = (px as f64 + 0.5 - 0.5 * self.width as f64) / f;
        let y = (0.5 * self.height as f64 - py as f64 - 0.5) / f;
        vec3::normalize(vec3::add(
            forward,
            vec3::add(vec3::scale(right, x), vec3::scale(up, y)),
        ))
    }
}

/// One ray per pixel, clipped to the [-1, 1]³ box; pixels whose ray misses
/// the box get the background.
pub fn render_view<F: RadianceField + ?Sized>(
    field: &F,
    cam: &Camera,
    n_samples: usize,
    background: Vec3,
) -> Result<Image> {
    ensure!(n_samples >= 2, "need at least 2 samples per ray, got {n_samples}");
    let rows = (0..cam.height)
        .into_par_iter()
        .map(|py| {
            (0..cam.width)
                .map(|px| {
                    let dir = cam.pixel_direction(px, py);
                    match intersect_box(cam.position, dir, -1.0, 1.0) {
                        Some((t0, t1)) => {
                            let ray = Ray::new(cam.position, dir, t0, t1)?;
                            render_ray(field, &ray, n_samples, background)
                        }
                        None => Ok(background),
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Image::from_pixels(cam.width, cam.height, rows.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::FeatureGrid;

    struct Constant(f64);

    impl RadianceField for Constant {
        fn sample(&self, _: Vec3) -> RadianceSample {
            RadianceSample {
                sigma: self.0,
                rgb: [0.2, 0.4, 0.6],
            }
        }
    }

    /// Density growing quadratically along +z.
    struct Quadratic;

    impl RadianceField for Quadratic {
        fn sample(&self, p: Vec3) -> RadianceSample {
            RadianceSample {
                sigma: 3.0 * (p[2] + 1.0) * (p[2] + 1.0),
                rgb: [0.5; 3],
            }
        }
    }

    fn z_ray() -> Ray {
        Ray::new([0.0, 0.0, -1.0], [0.0, 0.0, 1.0], 0.0, 2.0).unwrap()
    }

    fn random_triplane(seed: u64, res: usize, c: usize) -> Triplane {
        let mut rng = Rng::new(seed);
        let mut plane = || FeatureGrid::new(res, c, (0..res * res * c).map(|_| rng.gaussian()).collect()).unwrap();
        Triplane::new(plane(), plane(), plane()).unwrap()
    }

    #[test]
    fn zero_field_activations() {
        let tp = Triplane::zeros(4, 3).unwrap();
        let mlp = FieldMlpWeights::zeros(3, 8);
        let s = query_field(&tp, &mlp, [0.3, -0.2, 0.9]);
        assert!((s.sigma - 2f64.ln()).abs() < 1e-15);
        assert_eq!(s.rgb, [0.5; 3]);
    }

    #[test]
    fn field_is_continuous() {
        let tp = random_triplane(1, 8, 4);
        let mlp = FieldMlpWeights::random(4, 16, 2.0, 1.0, 2);
        let mut rng = Rng::new(3);
        for _ in 0..200 {
            let p = [0, 1, 2].map(|_| rng.uniform() * 1.8 - 0.9);
            let q = [p[0] + 1e-6, p[1] - 1e-6, p[2] + 1e-6];
            let (a, b) = (query_field(&tp, &mlp, p), query_field(&tp, &mlp, q));
            assert!((a.sigma - b.sigma).abs() < 1e-3);
        }
    }

    #[test]
    fn mirrored_planes_give_mirrored_density() {
        // x ↦ −x flips the column axis of XY and XZ; YZ does not depend on x.
        let res = 6;
        let base = random_triplane(4, res, 2);
        let mirror = |g: &FeatureGrid| {
            let mut m = g.clone();
            for r in 0..res {
                for c in 0..res {
                    let src = g.node(r, res - 1 - c).to_vec();
                    m.node_mut(r, c).copy_from_slice(&src);
                }
            }
            m
        };
        let sym = |g: &FeatureGrid| {
            let m = mirror(g);
            let data = g.data().iter().zip(m.data()).map(|(a, b)| a + b).collect();
            FeatureGrid::new(res, 2, data).unwrap()
        };
        let tp = Triplane::new(
            sym(base.plane(PlaneAxis::Xy)),
            base.plane(PlaneAxis::Yz).clone(),
            sym(base.plane(PlaneAxis::Xz)),
        )
        .unwrap();
        let mlp = FieldMlpWeights::random(2, 8, 1.0, 1.0, 5);
        let mut rng = Rng::new(6);
        for _ in 0..100 {
            let p = [0, 1, 2].map(|_| rng.uniform() * 2.0 - 1.0);
            let a = query_field(&tp, &mlp, p).sigma;
            let b = query_field(&tp, &mlp, [-p[0], p[1], p[2]]).sigma;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_density_renders_background() {
        let c = render_ray(&Constant(0.0), &z_ray(), 16, [0.1, 0.7, 0.3]).unwrap();
        assert_eq!(c, [0.1, 0.7, 0.3]);
    }

    #[test]
    fn constant_density_opacity_matches_closed_form() {
        let sigma = 1.3;
        let tr = march_ray(&Constant(sigma), &z_ray(), 256).unwrap();
        let opacity: f64 = tr.weights.iter().sum();
        let exact = 1.0 - (-sigma * 2.0f64).exp();
        assert!((opacity - exact).abs() / exact < 0.01);
    }

    #[test]
    fn weights_and_residual_telescope_to_one() {
        let tp = random_triplane(7, 8, 4);
        let mlp = FieldMlpWeights::random(4, 16, 3.0, 1.0, 8);
        let field = TriplaneField::new(&tp, &mlp).unwrap();
        let tr = march_ray(&field, &z_ray(), 64).unwrap();
        let total: f64 = tr.weights.iter().sum::<f64>() + tr.residual;
        assert!((total - 1.0).abs() < 1e-12);
        assert!(tr.transmittance.windows(2).all(|w| w[1] <= w[0]));
        assert!(tr.transmittance.iter().all(|t| (0.0..=1.0).contains(t)));
    }

    #[test]
    fn quadrature_error_shrinks_with_sample_count() {
        // ∫_0^2 3 s² ds = 8
        let exact = 1.0 - (-8.0f64).exp();
        let err = |n| {
            let tr = march_ray(&Quadratic, &z_ray(), n).unwrap();
            (tr.weights.iter().sum::<f64>() - exact).abs()
        };
        for n in [8, 16, 32, 64] {
            assert!(err(2 * n) * 2.0 <= err(n), "n = {n}");
        }
    }

    #[test]
    fn background_enters_linearly() {
        let tp = random_triplane(9, 8, 4);
        let mlp = FieldMlpWeights::random(4, 16, 2.0, 1.0, 10);
        let field = TriplaneField::new(&tp, &mlp).unwrap();
        let ray = Ray::new([-1.0, 0.2, -0.3], vec3::normalize([1.0, 0.1, 0.2]), 0.0, 2.0).unwrap();
        let (b1, b2) = ([1.0, 0.5, 0.0], [0.0, 0.25, 1.0]);
        let c1 = render_ray(&field, &ray, 32, b1).unwrap();
        let c2 = render_ray(&field, &ray, 32, b2).unwrap();
        let residual = march_ray(&field, &ray, 32).unwrap().residual;
        for c in 0..3 {
            assert!(((c1[c] - c2[c]) - residual * (b1[c] - b2[c])).abs() < 1e-9);
        }
    }

    #[test]
    fn ray_and_camera_validation() {
        assert!(Ray::new([0.0; 3], [1.0, 1.0, 0.0], 0.0, 1.0).is_err());
        assert!(Ray::new([0.0; 3], [1.0, 0.0, 0.0], 1.0, 1.0).is_err());
        assert!(Camera::new([0.0; 3], [0.0; 3], [0.0, 1.0, 0.0], 40.0, 4, 4).is_err());
        assert!(Camera::new([0.0, 2.0, 0.0], [0.0; 3], [0.0, 1.0, 0.0], 40.0, 4, 4).is_err());
        assert!(Camera::new([0.0, 0.0, 2.0], [0.0; 3], [0.0, 1.0, 0.0], 180.0, 4, 4).is_err());
        assert!(march_ray(&Constant(1.0), &z_ray(), 1).is_err());
    }

    #[test]
    fn camera_looking_away_sees_background() {
        let cam = Camera::new([0.0, 0.0, 3.0], [0.0, 0.0, 6.0], [0.0, 1.0, 0.0], 40.0, 16, 16).unwrap();
        let img = render_view(&Constant(5.0), &cam, 8, WHITE).unwrap();
        assert!(img.pixels().iter().all(|p| *p == WHITE));
    }

    #[test]
    fn render_view_is_deterministic() {
        let tp = random_triplane(11, 8, 4);
        let mlp = FieldMlpWeights::random(4, 16, 2.0, 1.0, 12);
        let field = TriplaneField::new(&tp, &mlp).unwrap();
        let cam = Camera::orbit(2.2, 30.0, 15.0, 50.0, 24, 24).unwrap();
        let a = render_view(&field, &cam, 24, WHITE).unwrap();
        let b = render_view(&field, &cam, 24, WHITE).unwrap();
        assert_eq!(a.to_ppm_bytes(), b.to_ppm_bytes());
        assert_eq!(a, b);
    }
}
