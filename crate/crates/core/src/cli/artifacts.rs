//! Triplane files, JSON reports and deferred output writing.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::config::RunConfig;
use crate::decoder::Triplane;
use crate::error::{Error, Result};
use crate::numerics::FeatureGrid;

pub const TRIPLANE_MAGIC: &[u8; 4] = b"TPTR";
pub const TRIPLANE_VERSION: u32 = 1;

/// `"TPTR"`, u32 version, u32 res, u32 channels, then the XY, YZ and XZ
/// planes as little-endian f64 in node order.
pub fn triplane_to_bytes(tp: &Triplane) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TRIPLANE_MAGIC);
    for v in [TRIPLANE_VERSION, tp.res() as u32, tp.channels() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for plane in tp.planes() {
        for v in plane.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn triplane_from_bytes(bytes: &[u8]) -> Result<Triplane> {
    let bad = |msg: &str| Error::Format(format!("triplane file: {msg}"));
    if bytes.len() < 16 || &bytes[..4] != TRIPLANE_MAGIC {
        return Err(bad("bad magic or truncated header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    if word(0) != TRIPLANE_VERSION as usize {
        return Err(bad("unsupported version"));
    }
    let (res, channels) = (word(1), word(2));
    let per_plane = res
        .checked_mul(res)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| bad("dimensions overflow"))?;
    if bytes.len() - 16 != per_plane * 3 * 8 {
        return Err(bad("payload size does not match header"));
    }
    let values: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let plane = |i: usize| {
        FeatureGrid::new(res, channels, values[i * per_plane..(i + 1) * per_plane].to_vec())
            .map_err(|e| bad(&e.to_string()))
    };
    Triplane::new(plane(0)?, plane(1)?, plane(2)?).map_err(|e| bad(&e.to_string()))
}

/// Config echo with typed values. The output directory is left out so that
/// identical runs written to different places report identically.
pub fn config_json(cfg: &RunConfig) -> Value {
    json!({
        "seed": cfg.seed,
        "alpha": cfg.alpha,
        "inject_layers": cfg.inject_layers,
        "mode": cfg.mode.name(),
        "layer_count": cfg.layer_count,
        "triplane_res": cfg.triplane_res,
        "grid_res": cfg.grid_res,
        "image_size": cfg.image_size,
        "n_surface_points": cfg.n_surface_points,
        "f_score_tau": cfg.f_score_tau,
        "n_ray_samples": cfg.n_ray_samples,
        "background": cfg.background,
        "turntable_views": cfg.turntable_views,
        "field_gain": cfg.field_gain,
        "scene": cfg.scene,
        "scene_color": cfg.scene_color,
        "style_kind": cfg.style_kind.name(),
    })
}

/// Pretty JSON with sorted keys and a trailing newline.
pub fn json_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    s.into_bytes()
}

/// Files collected during a command and written only once every
/// computation has succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl AsRef<Path>, bytes: Vec<u8>) {
        self.files.push((self.dir.join(name), bytes));
    }

    pub fn write(self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.files.len());
        for (path, bytes) in self.files {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}
