//! Chamfer distance and F-score over a uniform-grid nearest-neighbour index.

use rayon::prelude::*;

use super::PointCloud;
use crate::error::{ensure, Result};
use crate::numerics::vec3::{self, Vec3};

pub const DEFAULT_F_SCORE_TAU: f64 = 0.2;

/// Exact nearest-neighbour queries over a fixed point set.
///
/// Points are bucketed into cubic cells of side
/// `max_extent / ceil(n^(1/3))`, stored in compressed (CSR) form. A query
/// scans Chebyshev rings of cells around its own cell and stops once the
/// ring distance bound exceeds the best squared distance found.
#[derive(Debug, Clone)]
pub struct NnIndex {
    points: Vec<Vec3>,
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    cell_start: Vec<u32>,
    order: Vec<u32>,
}

impl NnIndex {
    pub fn new(cloud: &PointCloud) -> Self {
        let points = cloud.points().to_vec();
        let (lo, hi) = cloud.bounds();
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let per_axis = (points.len() as f64).cbrt().ceil().max(1.0);
        let cell = if extent > 0.0 { extent / per_axis } else { 1.0 };
        let dims = [0, 1, 2].map(|a| (((hi[a] - lo[a]) / cell).floor() as usize + 1).max(1));

        let mut index = Self {
            points,
            origin: lo,
            cell,
            dims,
            cell_start: Vec::new(),
            order: Vec::new(),
        };
        let n_cells = dims[0] * dims[1] * dims[2];
        let cell_of: Vec<usize> = index
            .points
            .iter()
            .map(|&p| index.flat(index.cell_coords(p)))
            .collect();
        let mut start = vec![0u32; n_cells + 1];
        for &c in &cell_of {
            start[c + 1] += 1;
        }
        for c in 0..n_cells {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let mut order = vec![0u32; index.points.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            order[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        index.cell_start = start;
        index.order = order;
        index
    }

    fn cell_coords(&self, p: Vec3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let c = ((p[a] - self.origin[a]) / self.cell).floor();
            if c <= 0.0 {
                0
            } else {
                (c as usize).min(self.dims[a] - 1)
            }
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn scan_cell(&self, c: [usize; 3], q: Vec3, best: &mut f64) {
        let f = self.flat(c);
        for &i in &self.order[self.cell_start[f] as usize..self.cell_start[f + 1] as usize] {
            let d = vec3::dist2(q, self.points[i as usize]);
            if d < *best {
                *best = d;
            }
        }
    }

    /// Squared distance from `q` to the nearest indexed point.
    pub fn nearest_dist2(&self, q: Vec3) -> f64 {
        let qc = self.cell_coords(q);
        let max_ring = (0..3)
            .map(|a| qc[a].max(self.dims[a] - 1 - qc[a]))
            .max()
            .unwrap_or(0);
        let mut best = f64::INFINITY;
        for r in 0..=max_ring {
            let ri = r as isize;
            for dz in -ri..=ri {
                for dy in -ri..=ri {
                    let on_shell = dz.abs() == ri || dy.abs() == ri;
                    let step = if on_shell || ri == 0 { 1 } else { (2 * ri) as usize };
                    for dx in (-ri..=ri).step_by(step) {
                        let c = [qc[0] as isize + dx, qc[1] as isize + dy, qc[2] as isize + dz];
                        if (0..3).all(|a| c[a] >= 0 && (c[a] as usize) < self.dims[a]) {
                            self.scan_cell([c[0] as usize, c[1] as usize, c[2] as usize], q, &mut best);
                        }
                    }
                }
            }
            // anything in ring r + 1 or beyond is at least r cells away
            let bound = (r as f64 * self.cell) * (1.0 - 1e-9);
            if best <= bound * bound {
                break;
            }
        }
        best
    }
}

fn mean_nearest(from: &PointCloud, to: &NnIndex) -> f64 {
    let d: Vec<f64> = from
        .points()
        .par_iter()
        .map(|&p| to.nearest_dist2(p))
        .collect();
    d.iter().sum::<f64>() / d.len() as f64
}

/// Symmetric mean of squared nearest-neighbour distances.
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    ensure!(!p.is_empty() && !q.is_empty(), "chamfer needs non-empty clouds");
    let forward = mean_nearest(p, &NnIndex::new(q));
    let backward = mean_nearest(q, &NnIndex::new(p));
    Ok(forward + backward)
}

fn fraction_within(from: &PointCloud, to: &NnIndex, tau2: f64) -> f64 {
    let hits = from
        .points()
        .par_iter()
        .filter(|&&p| to.nearest_dist2(p) <= tau2)
        .count();
    hits as f64 / from.len() as f64
}

/// Harmonic mean of precision (share of `p` within `tau` of `q`) and recall
/// (share of `q` within `tau` of `p`); 0 when both are 0.
pub fn f_score(p: &PointCloud, q: &PointCloud, tau: f64) -> Result<f64> {
    ensure!(!p.is_empty() && !q.is_empty(), "f-score needs non-empty clouds");
    ensure!(tau > 0.0, "f-score threshold must be positive, got {tau}");
    let tau2 = tau * tau;
    let precision = fraction_within(p, &NnIndex::new(q), tau2);
    let recall = fraction_within(q, &NnIndex::new(p), tau2);
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn brute_nearest(q: Vec3, pts: &[Vec3]) -> f64 {
        pts.iter().map(|&p| vec3::dist2(q, p)).fold(f64::INFINITY, f64::min)
    }

    fn brute_chamfer(p: &[Vec3], q: &[Vec3]) -> f64 {
        let a = p.iter().map(|&x| brute_nearest(x, q)).sum::<f64>() / p.len() as f64;
        let b = q.iter().map(|&x| brute_nearest(x, p)).sum::<f64>() / q.len() as f64;
        a + b
    }

    fn cloud(n: usize, rng: &mut Rng, scale: f64, offset: f64) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| [0, 1, 2].map(|_| offset + scale * rng.uniform()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn hand_cases() {
        let p = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        let q = PointCloud::new(vec![[0.0, 0.0, 0.1]]).unwrap();
        assert!((chamfer(&p, &q).unwrap() - 0.02).abs() < 1e-15);

        let mut rng = Rng::new(1);
        let c = cloud(500, &mut rng, 1.0, 0.0);
        assert_eq!(chamfer(&c, &c).unwrap(), 0.0);
        assert_eq!(f_score(&c, &c, 0.2).unwrap(), 1.0);

        let far = cloud(50, &mut rng, 0.1, 5.0);
        assert_eq!(f_score(&c, &far, 0.2).unwrap(), 0.0);
        assert!(f_score(&c, &far, 0.0).is_err());
    }

    #[test]
    fn queries_far_outside_the_grid() {
        let mut rng = Rng::new(2);
        let c = cloud(300, &mut rng, 1.0, 0.0);
        let idx = NnIndex::new(&c);
        for q in [[-3.0, 0.5, 0.5], [4.0, 4.0, -2.0], [0.5, 9.0, 0.5]] {
            assert_eq!(idx.nearest_dist2(q), brute_nearest(q, c.points()));
        }
    }

    #[test]
    fn flat_and_repeated_clouds() {
        let flat = PointCloud::new((0..100).map(|i| [i as f64 * 0.01, 0.0, 0.0]).collect()).unwrap();
        let idx = NnIndex::new(&flat);
        assert_eq!(idx.nearest_dist2([0.505, 0.3, 0.0]), brute_nearest([0.505, 0.3, 0.0], flat.points()));
        let single = PointCloud::new(vec![[1.0, 2.0, 3.0]; 5]).unwrap();
        assert_eq!(NnIndex::new(&single).nearest_dist2([1.0, 2.0, 4.0]), 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn accelerated_equals_brute_force(seed in any::<u64>(), n in 1usize..400, m in 1usize..400, spread in 0.01f64..3.0) {
            let mut rng = Rng::new(seed);
            let p = cloud(n, &mut rng, 1.0, 0.0);
            let q = cloud(m, &mut rng, spread, -0.5);
            let fast = chamfer(&p, &q).unwrap();
            prop_assert_eq!(fast, brute_chamfer(p.points(), q.points()));
            prop_assert_eq!(fast, chamfer(&q, &p).unwrap());
        }

        #[test]
        fn f_score_is_monotone_in_tau(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let p = cloud(200, &mut rng, 1.0, 0.0);
            let q = cloud(150, &mut rng, 1.0, 0.3);
            let mut prev = 0.0;
            for k in 1..40 {
                let f = f_score(&p, &q, k as f64 * 0.01).unwrap();
                prop_assert!(f >= prev);
                prev = f;
            }
        }

        #[test]
        fn chamfer_is_rigid_invariant(seed in any::<u64>(), angle in 0.0f64..6.3, shift in -2.0f64..2.0) {
            let mut rng = Rng::new(seed);
            let p = cloud(120, &mut rng, 1.0, 0.0);
            let q = cloud(90, &mut rng, 1.0, 0.1);
            let (s, c) = angle.sin_cos();
            let rigid = |v: Vec3| [c * v[0] - s * v[1] + shift, s * v[0] + c * v[1], v[2] - shift];
            let base = chamfer(&p, &q).unwrap();
            let moved = chamfer(&p.map(rigid).unwrap(), &q.map(rigid).unwrap()).unwrap();
            prop_assert!((base - moved).abs() <= 1e-9);
        }
    }
}
