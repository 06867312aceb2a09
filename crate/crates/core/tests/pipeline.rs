use nalgebra::DMatrix;
use proptest::prelude::*;
use tristyle::cli::config::RunConfig;
use tristyle::cli::pipeline::{scene_views, style_from_config, Pipeline};
use tristyle::cli::weights_file::Weights;
use tristyle::decoder::{InjectionMode, StyleConfig};
use tristyle::harness::{silhouette_hit, AnalyticScene, ColorFn, OpaqueSceneField, Shape};
use tristyle::renderer::{render_view, Camera};
use tristyle::stylemetric::{gram, FeatureMap};

#[test]
fn opaque_sphere_silhouette_matches_ray_intersection() {
    let scene = AnalyticScene::new(Shape::Sphere { radius: 0.6 }, ColorFn::Bands, 1).unwrap();
    let field = OpaqueSceneField { scene: &scene, density: 200.0 };
    let cam = Camera::orbit(2.2, 35.0, 20.0, 50.0, 64, 64).unwrap();
    // render over black and white: the difference is the residual transmittance
    let black = render_view(&field, &cam, 128, [0.0; 3]).unwrap();
    let white = render_view(&field, &cam, 128, [1.0; 3]).unwrap();
    let mut agree = 0;
    for y in 0..64 {
        for x in 0..64 {
            let residual = white.get(x, y)[0] - black.get(x, y)[0];
            if (residual < 0.5) == silhouette_hit(&scene, &cam, x, y) {
                agree += 1;
            }
        }
    }
    let share = agree as f64 / (64.0 * 64.0);
    assert!(share >= 0.99, "silhouette agreement {share}");
}

#[test]
fn small_pipeline_gates_and_modes() {
    let cfg = RunConfig {
        layer_count: 4,
        inject_layers: 2,
        triplane_res: 8,
        grid_res: 24,
        image_size: 32,
        n_surface_points: 1500,
        n_ray_samples: 12,
        turntable_views: 2,
        ..RunConfig::default()
    };
    let w = Weights::generate(&cfg).unwrap();
    let views = scene_views(&cfg).unwrap();
    let p = Pipeline::new(&w, &cfg, &views, style_from_config(&cfg).unwrap()).unwrap();

    for mode in InjectionMode::ALL {
        let gated = p.stylize(StyleConfig { alpha: 0.0, mode, ..cfg.style() });
        if mode == InjectionMode::TokenConcat {
            // concatenation has no blend weight to switch it off
            assert!(gated.unwrap().triplane != p.base);
        } else {
            let run = gated.unwrap();
            assert_eq!(run.triplane, p.base);
            assert_eq!(run.metrics.chamfer, 0.0);
        }
    }
    let full = p.stylize(cfg.style()).unwrap();
    assert!(full.metrics.chamfer > 0.0);
    assert!(full.metrics.style_fidelity > 0.0);
    assert_eq!(full.renders.len(), 2);
    assert!(p.stylize(StyleConfig { inject_layers: 5, ..cfg.style() }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_is_symmetric_psd(c in 1usize..12, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let mut rng = tristyle::numerics::Rng::new(seed);
        let data = (0..c * h * w).map(|_| rng.gaussian().max(0.0) * 3.0).collect();
        let g = gram(&FeatureMap::new(c, h, w, data).unwrap());
        for a in 0..c {
            for b in 0..c {
                prop_assert_eq!(g.get(a, b), g.get(b, a));
            }
        }
        let eig = DMatrix::from_row_slice(c, c, g.data()).symmetric_eigenvalues();
        prop_assert!(eig.min() >= -1e-8);
    }
}
