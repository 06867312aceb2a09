//! Surface extraction from density fields and point-cloud metrics.

mod marching_cubes;
mod mc_tables;
mod metrics;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::numerics::vec3::{self, Vec3};
use crate::numerics::Rng;
use crate::renderer::RadianceField;

pub use self::marching_cubes::marching_cubes;
pub use self::metrics::{chamfer, f_score, NnIndex, DEFAULT_F_SCORE_TAU};

pub const DEFAULT_SURFACE_POINTS: usize = 16_384;
/// Extraction level for density grids: one unit above the `ln 2` density an
/// all-zero field produces.
pub const DEFAULT_ISO: f64 = std::f64::consts::LN_2 + 1.0;

/// `G³` samples on the lattice `-1 + 2i/(G-1)` of [-1, 1]³, stored z-major:
/// value `(ix, iy, iz)` lives at `(iz·G + iy)·G + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    res: usize,
    values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(res: usize, values: Vec<f64>) -> Result<Self> {
        ensure!(res >= 2, "scalar grid resolution must be >= 2, got {res}");
        ensure!(
            values.len() == res * res * res,
            "scalar grid {res}³ needs {} values, got {}",
            res * res * res,
            values.len()
        );
        ensure!(
            values.iter().all(|v| v.is_finite()),
            "scalar grid has non-finite values"
        );
        Ok(Self { res, values })
    }

    /// Evaluates `f` at every lattice point.
    pub fn from_fn(res: usize, f: impl Fn(Vec3) -> f64 + Sync) -> Result<Self> {
        ensure!(res >= 2, "scalar grid resolution must be >= 2, got {res}");
        let values = (0..res * res * res)
            .into_par_iter()
            .map(|i| f(lattice_point(res, i % res, (i / res) % res, i / (res * res))))
            .collect();
        Self::new(res, values)
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[(iz * self.res + iy) * self.res + ix]
    }

    pub fn point(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        lattice_point(self.res, ix, iy, iz)
    }
}

fn lattice_point(res: usize, ix: usize, iy: usize, iz: usize) -> Vec3 {
    let step = 2.0 / (res - 1) as f64;
    [ix, iy, iz].map(|i| -1.0 + i as f64 * step)
}

/// Density (`sigma`) of a field sampled on the `G³` lattice.
pub fn density_grid<F: RadianceField + ?Sized>(field: &F, res: usize) -> Result<ScalarGrid> {
    ScalarGrid::from_fn(res, |p| field.sample(p).sigma)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        self.triangles[i].map(|v| self.vertices[v as usize])
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(u32, u32)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// `V − E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    /// ASCII OBJ with `v` and `f` records only (1-based indices).
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_obj())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        ensure!(!points.is_empty(), "point cloud must not be empty");
        ensure!(
            points.iter().flatten().all(|v| v.is_finite()),
            "point cloud has non-finite coordinates"
        );
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    /// Applies `f` to every point.
    pub fn map(&self, f: impl Fn(Vec3) -> Vec3) -> Result<PointCloud> {
        PointCloud::new(self.points.iter().map(|&p| f(p)).collect())
    }

    /// One `x y z` line per point.
    pub fn to_xyz(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
        }
        s
    }

    /// Parses whitespace-separated `x y z` lines; blank lines and `#`
    /// comments are skipped.
    pub fn parse_xyz(text: &str, origin: &str) -> Result<PointCloud> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 coordinates, found {}", fields.len())));
            }
            let mut p = [0.0; 3];
            for (slot, f) in p.iter_mut().zip(&fields) {
                *slot = f
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("bad coordinate {f:?}")))?;
            }
            points.push(p);
        }
        if points.is_empty() {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: text.lines().count(),
                msg: "no points".into(),
            });
        }
        PointCloud::new(points)
    }

    pub fn save_xyz(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_xyz())?;
        Ok(())
    }

    pub fn load_xyz(path: &Path) -> Result<PointCloud> {
        PointCloud::parse_xyz(&fs::read_to_string(path)?, &path.display().to_string())
    }
}

/// Area-weighted uniform sampling of `n` points on the mesh surface.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if mesh.is_empty() {
        return Err(Error::EmptySurface("cannot sample an empty mesh".into()));
    }
    ensure!(n >= 1, "need at least one surface sample");
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for i in 0..mesh.triangles.len() {
        total += mesh.triangle_area(i);
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(Error::EmptySurface("mesh has zero surface area".into()));
    }
    let mut rng = Rng::new(seed);
    let points = (0..n)
        .map(|_| {
            let target = rng.uniform() * total;
            let tri = cumulative
                .partition_point(|&c| c <= target)
                .min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangle(tri);
            let s = rng.uniform().sqrt();
            let t = rng.uniform();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - t), s * t);
            [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k])
        })
        .collect();
    PointCloud::new(points)
}

/// Moves the minimum corner to the origin and scales uniformly so that the
/// longest axis spans exactly [0, 1].
pub fn normalize_unit_cube(pc: &PointCloud) -> Result<PointCloud> {
    let (lo, hi) = pc.bounds();
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if extent <= 0.0 {
        return Err(Error::Degenerate("point cloud has zero extent".into()));
    }
    pc.map(|p| [0, 1, 2].map(|a| (p[a] - lo[a]) / extent))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_grid_of_zero_field_is_ln2() {
        use crate::decoder::Triplane;
        use crate::renderer::{FieldMlpWeights, TriplaneField};
        let tp = Triplane::zeros(4, 2).unwrap();
        let mlp = FieldMlpWeights::zeros(2, 4);
        let g = density_grid(&TriplaneField::new(&tp, &mlp).unwrap(), 5).unwrap();
        assert!(g.values().iter().all(|&v| (v - 2f64.ln()).abs() < 1e-15));

        let corners = ScalarGrid::from_fn(2, |p| p[0] + 2.0 * p[1] + 4.0 * p[2]).unwrap();
        assert_eq!(corners.values().len(), 8);
        assert_eq!(corners.get(1, 0, 1), 3.0);
        assert_eq!(corners.point(1, 1, 0), [1.0, 1.0, -1.0]);
    }

    #[test]
    fn single_triangle_samples_stay_inside() {
        let mesh = TriangleMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
        };
        let pc = sample_surface(&mesh, 1000, 3).unwrap();
        for p in pc.points() {
            // barycentric coordinates of (x, y) in the unit right triangle
            let (b, c) = (p[0], p[1]);
            let a = 1.0 - b - c;
            assert!(a >= -1e-12 && b >= 0.0 && c >= 0.0);
            assert_eq!(p[2], 0.0);
        }
        assert_eq!(pc, sample_surface(&mesh, 1000, 3).unwrap());
        assert!(matches!(
            sample_surface(&TriangleMesh::default(), 10, 0),
            Err(Error::EmptySurface(_))
        ));
    }

    #[test]
    fn area_proportional_sampling() {
        // areas 3:1 → expected fraction 0.75, binomial σ = sqrt(n·p·(1−p))
        let mesh = TriangleMesh {
            vertices: vec![
                [0.0, 0.0, 0.0],
                [3.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [10.0, 0.0, 0.0],
                [11.0, 0.0, 0.0],
                [10.0, 1.0, 0.0],
            ],
            triangles: vec![[0, 1, 2], [3, 4, 5]],
        };
        let n = DEFAULT_SURFACE_POINTS;
        let pc = sample_surface(&mesh, n, 17).unwrap();
        let big = pc.points().iter().filter(|p| p[0] < 5.0).count() as f64;
        let sigma = (n as f64 * 0.75 * 0.25).sqrt();
        assert!((big - 0.75 * n as f64).abs() < 3.0 * sigma);
    }

    #[test]
    fn normalization_cases() {
        let unit = PointCloud::new(vec![[0.0, 0.2, 0.1], [1.0, 0.5, 0.9], [0.3, 0.0, 0.0]]).unwrap();
        assert_eq!(normalize_unit_cube(&unit).unwrap(), unit);

        let corners: Vec<Vec3> = (0..8)
            .map(|i| [i & 1, (i >> 1) & 1, (i >> 2) & 1].map(|b| 2.0 + 2.0 * b as f64))
            .collect();
        let n = normalize_unit_cube(&PointCloud::new(corners).unwrap()).unwrap();
        for (i, p) in n.points().iter().enumerate() {
            assert_eq!(*p, [i & 1, (i >> 1) & 1, (i >> 2) & 1].map(|b| b as f64));
        }

        let same = PointCloud::new(vec![[0.5; 3]; 4]).unwrap();
        assert!(matches!(normalize_unit_cube(&same), Err(Error::Degenerate(_))));
    }

    #[test]
    fn xyz_parsing() {
        let pc = PointCloud::parse_xyz("# header\n1 2 3\n\n4.5 -1 0\n", "mem").unwrap();
        assert_eq!(pc.points(), &[[1.0, 2.0, 3.0], [4.5, -1.0, 0.0]]);
        assert_eq!(PointCloud::parse_xyz(&pc.to_xyz(), "mem").unwrap(), pc);
        match PointCloud::parse_xyz("1 2 3\n1 2\n", "f.xyz") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match PointCloud::parse_xyz("1 2 3\n0 0 0\n1 x 2\n", "f.xyz") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn obj_export_format() {
        let mesh = TriangleMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.5, 0.0]],
            triangles: vec![[0, 1, 2]],
        };
        assert_eq!(mesh.to_obj(), "v 0 0 0\nv 1 0 0\nv 0 0.5 0\nf 1 2 3\n");
    }
}
