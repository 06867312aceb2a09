//! Command-line entry point.

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod weights_file;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::decoder::StyleConfig;
use crate::error::{ensure, Error, Result};
use crate::geometry::{chamfer, f_score, PointCloud};
use crate::harness::{render_ground_truth_views, sample_scene_surface};
use crate::image::Image;
use crate::stylemetric::{style_fidelity, FeatureExtractor, DEFAULT_POOL, DEFAULT_STAGE_CHANNELS};

use self::artifacts::{config_json, json_bytes, triplane_to_bytes, Outputs};
use self::config::{stream, RunConfig};
use self::pipeline::{extract_surface, render_turntable, scene_from_config, scene_views, style_from_config, Pipeline};
use self::weights_file::{Seeds, Weights};

pub const DEFAULT_LAYER_SWEEP: [usize; 8] = [0, 1, 2, 4, 6, 8, 10, 16];
pub const DEFAULT_ALPHA_SWEEP: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Parser)]
#[command(name = "tristyle", version, about = "Feed-forward style injection into triplane reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write seeded weights for every network.
    InitWeights {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Render the analytic scene's six input views, style image and surface samples.
    MakeScene {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Decode views into a triplane, mesh and turntable renders.
    Reconstruct {
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Decode with and without style injection and score the result.
    Stylize {
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Repeat stylization over injection depths or blend weights.
    Sweep {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated values; defaults depend on the axis.
        #[arg(long)]
        values: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score user-supplied point clouds and images.
    Eval {
        #[arg(long)]
        cloud_a: Option<PathBuf>,
        #[arg(long)]
        cloud_b: Option<PathBuf>,
        /// Rendered images compared against --style.
        #[arg(long, num_args = 1..)]
        renders: Vec<PathBuf>,
        #[arg(long)]
        style: Option<PathBuf>,
        /// Take the feature extractor from a weights file instead of the seed.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepAxis {
    Alpha,
    Layers,
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Directory holding view_0.ppm … view_5.ppm; rendered from the scene otherwise.
    #[arg(long)]
    views: Option<PathBuf>,
    /// Style image (PPM); generated from --style-kind otherwise.
    #[arg(long)]
    style: Option<PathBuf>,
}

/// Every run-config field as an optional override.
#[derive(Debug, Args, Default)]
struct ConfigArgs {
    /// key = value config file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    inject_layers: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    layer_count: Option<String>,
    #[arg(long)]
    triplane_res: Option<String>,
    #[arg(long)]
    grid_res: Option<String>,
    #[arg(long)]
    image_size: Option<String>,
    #[arg(long)]
    n_surface_points: Option<String>,
    #[arg(long)]
    f_score_tau: Option<String>,
    #[arg(long)]
    n_ray_samples: Option<String>,
    #[arg(long)]
    background: Option<String>,
    #[arg(long)]
    turntable_views: Option<String>,
    #[arg(long)]
    field_gain: Option<String>,
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    scene_color: Option<String>,
    #[arg(long)]
    style_kind: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let overrides = [
            ("seed", &self.seed),
            ("alpha", &self.alpha),
            ("inject_layers", &self.inject_layers),
            ("mode", &self.mode),
            ("layer_count", &self.layer_count),
            ("triplane_res", &self.triplane_res),
            ("grid_res", &self.grid_res),
            ("image_size", &self.image_size),
            ("n_surface_points", &self.n_surface_points),
            ("f_score_tau", &self.f_score_tau),
            ("n_ray_samples", &self.n_ray_samples),
            ("background", &self.background),
            ("turntable_views", &self.turntable_views),
            ("field_gain", &self.field_gain),
            ("scene", &self.scene),
            ("scene_color", &self.scene_color),
            ("style_kind", &self.style_kind),
            ("out_dir", &self.out_dir),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v)
                    .map_err(|msg| Error::InvalidArgument(format!("--{}: {msg}", key.replace('_', "-"))))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<Vec<PathBuf>> {
    match command {
        Command::InitWeights { out, config } => cmd_init_weights(&config.resolve()?, &out),
        Command::MakeScene { config } => cmd_make_scene(&config.resolve()?),
        Command::Reconstruct { inputs, config } => cmd_reconstruct(&inputs, &config.resolve()?),
        Command::Stylize { inputs, config } => cmd_stylize(&inputs, &config.resolve()?),
        Command::Sweep {
            inputs,
            axis,
            values,
            config,
        } => cmd_sweep(&inputs, axis, values.as_deref(), &config.resolve()?),
        Command::Eval {
            cloud_a,
            cloud_b,
            renders,
            style,
            weights,
            config,
        } => cmd_eval(
            &EvalInputs {
                cloud_a,
                cloud_b,
                renders,
                style,
                weights,
            },
            &config.resolve()?,
        ),
    }
}

fn cmd_init_weights(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut outputs = Outputs::new(Path::new(""));
    outputs.add(out, Weights::generate(cfg)?.to_bytes());
    outputs.write()
}

fn view_name(i: usize) -> String {
    format!("view_{i}.ppm")
}

fn cmd_make_scene(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let scene = scene_from_config(cfg)?;
    let views = render_ground_truth_views(&scene, cfg.image_size)?;
    let surface = sample_scene_surface(&scene, cfg.n_surface_points, cfg.seed.wrapping_add(stream::SURFACE))?;
    let mut out = Outputs::new(&cfg.out_dir);
    for (i, (img, _)) in views.iter().enumerate() {
        out.add(view_name(i), img.to_ppm_bytes());
    }
    out.add("style.ppm", style_from_config(cfg)?.to_ppm_bytes());
    out.add("surface.xyz", surface.to_xyz().into_bytes());
    out.write()
}

struct Loaded {
    weights: Weights,
    views: Vec<Image>,
    style: Image,
}

fn load_inputs(inputs: &InputArgs, cfg: &RunConfig) -> Result<Loaded> {
    let weights = Weights::load(&inputs.weights)?;
    weights.check_config(cfg)?;
    let views = match &inputs.views {
        Some(dir) => (0..crate::encoder::DEFAULT_VIEW_COUNT)
            .map(|i| Image::load_ppm(&dir.join(view_name(i))))
            .collect::<Result<Vec<_>>>()?,
        None => scene_views(cfg)?,
    };
    let style = match &inputs.style {
        Some(path) => Image::load_ppm(path)?,
        None => style_from_config(cfg)?,
    };
    Ok(Loaded { weights, views, style })
}

fn cmd_reconstruct(inputs: &InputArgs, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let Loaded { weights, views, .. } = load_inputs(inputs, cfg)?;
    let content = crate::encoder::encode_views(&views, &weights.encoder, crate::encoder::DEFAULT_VIEW_COUNT)?;
    let tp = crate::decoder::decode(&content, None, &StyleConfig::unstylized(), &weights.decoder)?;
    let surface = extract_surface(&tp, &weights, cfg)?;
    let renders = render_turntable(&tp, &weights, cfg)?;
    let mut out = Outputs::new(&cfg.out_dir);
    out.add("triplane.tptr", triplane_to_bytes(&tp));
    out.add("mesh.obj", surface.mesh.to_obj().into_bytes());
    out.add("surface.xyz", surface.points.to_xyz().into_bytes());
    for (i, img) in renders.iter().enumerate() {
        out.add(format!("turntable_{i}.ppm"), img.to_ppm_bytes());
    }
    out.write()
}

fn cmd_stylize(inputs: &InputArgs, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let start = Instant::now();
    let loaded = load_inputs(inputs, cfg)?;
    let pipeline = Pipeline::new(&loaded.weights, cfg, &loaded.views, loaded.style)?;
    let setup_s = start.elapsed().as_secs_f64();
    let styled = pipeline.stylize(cfg.style())?;
    let stylize_s = start.elapsed().as_secs_f64() - setup_s;
    let base_renders = pipeline.render_base()?;
    let total_s = start.elapsed().as_secs_f64();

    let mut out = Outputs::new(&cfg.out_dir);
    out.add("base_triplane.tptr", triplane_to_bytes(&pipeline.base));
    out.add("stylized_triplane.tptr", triplane_to_bytes(&styled.triplane));
    out.add("base_mesh.obj", pipeline.base_surface.mesh.to_obj().into_bytes());
    out.add("stylized_mesh.obj", styled.surface.mesh.to_obj().into_bytes());
    for (i, (b, s)) in base_renders.iter().zip(&styled.renders).enumerate() {
        out.add(format!("base_turntable_{i}.ppm"), b.to_ppm_bytes());
        out.add(format!("stylized_turntable_{i}.ppm"), s.to_ppm_bytes());
    }
    let report = json!({
        "chamfer": styled.metrics.chamfer,
        "f_score": styled.metrics.f_score,
        "style_fidelity": styled.metrics.style_fidelity,
        "extractor_seed": loaded.weights.extractor.seed,
        "weights_seed": loaded.weights.seed,
        "config": config_json(cfg),
        "mesh": {
            "base_vertices": pipeline.base_surface.mesh.vertices.len(),
            "base_triangles": pipeline.base_surface.mesh.triangles.len(),
            "stylized_vertices": styled.surface.mesh.vertices.len(),
            "stylized_triangles": styled.surface.mesh.triangles.len(),
        },
    });
    out.add("report.json", json_bytes(&report));
    // wall-clock numbers live apart from the report so the report stays reproducible
    out.add(
        "timings.json",
        json_bytes(&json!({ "setup_s": setup_s, "stylize_s": stylize_s, "total_s": total_s })),
    );
    out.write()
}

fn sweep_values(axis: SweepAxis, values: Option<&str>, cfg: &RunConfig) -> Result<Vec<StyleConfig>> {
    let base = cfg.style();
    let parsed: Vec<StyleConfig> = match (axis, values) {
        (SweepAxis::Layers, None) => DEFAULT_LAYER_SWEEP
            .iter()
            .filter(|&&k| k <= cfg.layer_count)
            .map(|&k| StyleConfig { inject_layers: k, ..base })
            .collect(),
        (SweepAxis::Alpha, None) => DEFAULT_ALPHA_SWEEP
            .iter()
            .map(|&alpha| StyleConfig { alpha, ..base })
            .collect(),
        (axis, Some(text)) => text
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| match axis {
                SweepAxis::Layers => s
                    .parse()
                    .map(|k| StyleConfig { inject_layers: k, ..base })
                    .map_err(|_| Error::InvalidArgument(format!("--values: bad layer count '{s}'"))),
                SweepAxis::Alpha => s
                    .parse()
                    .map(|alpha| StyleConfig { alpha, ..base })
                    .map_err(|_| Error::InvalidArgument(format!("--values: bad alpha '{s}'"))),
            })
            .collect::<Result<_>>()?,
    };
    ensure!(!parsed.is_empty(), "sweep needs at least one value");
    for s in &parsed {
        s.validate(cfg.layer_count)?;
    }
    Ok(parsed)
}

fn cmd_sweep(inputs: &InputArgs, axis: SweepAxis, values: Option<&str>, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let styles = sweep_values(axis, values, cfg)?;
    let loaded = load_inputs(inputs, cfg)?;
    let pipeline = Pipeline::new(&loaded.weights, cfg, &loaded.views, loaded.style)?;
    let mut table = String::from("value\tchamfer\tf_score\tstyle_fidelity\n");
    let mut rows = Vec::new();
    for style in styles {
        let run = pipeline.stylize(style)?;
        let value = match axis {
            SweepAxis::Layers => json!(style.inject_layers),
            SweepAxis::Alpha => json!(style.alpha),
        };
        let m = run.metrics;
        writeln!(table, "{value}\t{:?}\t{:?}\t{:?}", m.chamfer, m.f_score, m.style_fidelity).expect("string write");
        rows.push(json!({
            "value": value,
            "chamfer": m.chamfer,
            "f_score": m.f_score,
            "style_fidelity": m.style_fidelity,
        }));
    }
    let axis_name = match axis {
        SweepAxis::Layers => "layers",
        SweepAxis::Alpha => "alpha",
    };
    let report = json!({
        "axis": axis_name,
        "rows": rows,
        "extractor_seed": loaded.weights.extractor.seed,
        "config": config_json(cfg),
    });
    let mut out = Outputs::new(&cfg.out_dir);
    out.add(format!("sweep_{axis_name}.tsv"), table.into_bytes());
    out.add(format!("sweep_{axis_name}.json"), json_bytes(&report));
    out.write()
}

struct EvalInputs {
    cloud_a: Option<PathBuf>,
    cloud_b: Option<PathBuf>,
    renders: Vec<PathBuf>,
    style: Option<PathBuf>,
    weights: Option<PathBuf>,
}

fn cmd_eval(inputs: &EvalInputs, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut report = serde_json::Map::new();
    match (&inputs.cloud_a, &inputs.cloud_b) {
        (Some(a), Some(b)) => {
            let (a, b) = (PointCloud::load_xyz(a)?, PointCloud::load_xyz(b)?);
            report.insert("chamfer".into(), json!(chamfer(&a, &b)?));
            report.insert("f_score".into(), json!(f_score(&a, &b, cfg.f_score_tau)?));
        }
        (None, None) => {}
        _ => return Err(Error::InvalidArgument("--cloud-a and --cloud-b go together".into())),
    }
    match (&inputs.style, inputs.renders.is_empty()) {
        (Some(style), false) => {
            let extractor = match &inputs.weights {
                Some(path) => Weights::load(path)?.extractor,
                None => FeatureExtractor::random(&DEFAULT_STAGE_CHANNELS, DEFAULT_POOL, Seeds::from_base(cfg.seed).extractor)?,
            };
            let renders = inputs
                .renders
                .iter()
                .map(|p| Image::load_ppm(p))
                .collect::<Result<Vec<_>>>()?;
            let score = style_fidelity(&renders, &Image::load_ppm(style)?, &extractor)?;
            report.insert("style_fidelity".into(), json!(score));
            report.insert("extractor_seed".into(), json!(extractor.seed));
        }
        (None, true) => {}
        _ => return Err(Error::InvalidArgument("--renders and --style go together".into())),
    }
    ensure!(!report.is_empty(), "nothing to evaluate: pass point clouds and/or renders with a style image");
    report.insert("config".into(), config_json(cfg));
    let mut out = Outputs::new(&cfg.out_dir);
    out.add("eval.json", json_bytes(&Value::Object(report)));
    out.write()
}
