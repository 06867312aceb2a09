//! Binary weights container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TPSW"  u32 version
//! u32 × 6  encoder: image_size patch dim blocks heads mlp_hidden
//! u32 × 6  decoder: layers heads dim res channels mlp_hidden
//! u32      field MLP hidden width
//! u32 n, u32 × n  feature-extractor stage channels;  u32 pool
//! u64 × 5  seeds: base encoder decoder field extractor
//! u32      tensor count
//! per tensor: u32 rows, u32 cols, rows·cols × f32
//! ```
//!
//! Tensors follow the encoder, decoder, field MLP and extractor in their
//! fixed `tensors()` order.

use std::path::Path;

use super::config::{stream, RunConfig};
use crate::decoder::{DecoderDims, DecoderWeights};
use crate::encoder::{EncoderDims, EncoderWeights};
use crate::error::{ensure, Error, Result};
use crate::geometry::DEFAULT_ISO;
use crate::numerics::Matrix;
use crate::renderer::FieldMlpWeights;
use crate::stylemetric::{FeatureExtractor, DEFAULT_POOL, DEFAULT_STAGE_CHANNELS};

pub const MAGIC: &[u8; 4] = b"TPSW";
pub const VERSION: u32 = 1;
pub const FIELD_HIDDEN: usize = 32;
const MAX_DIM: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub seed: u64,
    pub encoder: EncoderWeights,
    pub decoder: DecoderWeights,
    pub field: FieldMlpWeights,
    pub extractor: FeatureExtractor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub base: u64,
    pub encoder: u64,
    pub decoder: u64,
    pub field: u64,
    pub extractor: u64,
}

impl Seeds {
    pub fn from_base(base: u64) -> Self {
        Self {
            base,
            encoder: base.wrapping_add(stream::ENCODER),
            decoder: base.wrapping_add(stream::DECODER),
            field: base.wrapping_add(stream::FIELD),
            extractor: base.wrapping_add(stream::EXTRACTOR),
        }
    }
}

impl Weights {
    /// Seeded weights shaped by the config's resolutions and layer count.
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        let seeds = Seeds::from_base(cfg.seed);
        let enc_dims = EncoderDims {
            image_size: cfg.image_size,
            ..EncoderDims::default()
        };
        let dec_dims = DecoderDims {
            layers: cfg.layer_count,
            res: cfg.triplane_res,
            dim: enc_dims.dim,
            ..DecoderDims::default()
        };
        let field = FieldMlpWeights::random(dec_dims.channels, FIELD_HIDDEN, cfg.field_gain, DEFAULT_ISO, seeds.field);
        Ok(Self {
            seed: cfg.seed,
            encoder: EncoderWeights::random(enc_dims, seeds.encoder)?,
            decoder: DecoderWeights::random(dec_dims, seeds.decoder)?,
            field,
            extractor: FeatureExtractor::random(&DEFAULT_STAGE_CHANNELS, DEFAULT_POOL, seeds.extractor)?,
        })
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            extractor: self.extractor.seed,
            ..Seeds::from_base(self.seed)
        }
    }

    /// Checks that the weights can run with `cfg`.
    pub fn check_config(&self, cfg: &RunConfig) -> Result<()> {
        let d = self.decoder.dims;
        ensure!(
            d.layers == cfg.layer_count,
            "weights have {} decoder layers, config asks for {}",
            d.layers,
            cfg.layer_count
        );
        ensure!(
            d.res == cfg.triplane_res,
            "weights decode {}² triplanes, config asks for {}²",
            d.res,
            cfg.triplane_res
        );
        ensure!(
            self.encoder.dims.image_size == cfg.image_size,
            "weights expect {}px views, config asks for {}px",
            self.encoder.dims.image_size,
            cfg.image_size
        );
        Ok(())
    }

    fn tensors(&self) -> Vec<&Matrix> {
        let mut v = self.encoder.tensors();
        v.extend(self.decoder.tensors());
        v.extend(self.field.tensors());
        v.extend(self.extractor.tensors());
        v
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let e = self.encoder.dims;
        for v in [e.image_size, e.patch, e.dim, e.blocks, e.heads, e.mlp_hidden] {
            put_u32(&mut out, v as u32);
        }
        let d = self.decoder.dims;
        for v in [d.layers, d.heads, d.dim, d.res, d.channels, d.mlp_hidden] {
            put_u32(&mut out, v as u32);
        }
        put_u32(&mut out, self.field.hidden() as u32);
        put_u32(&mut out, self.extractor.stages.len() as u32);
        for s in &self.extractor.stages {
            put_u32(&mut out, s.out_channels() as u32);
        }
        put_u32(&mut out, self.extractor.stages[0].pool as u32);
        let s = self.seeds();
        for v in [s.base, s.encoder, s.decoder, s.field, s.extractor] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let tensors = self.tensors();
        put_u32(&mut out, tensors.len() as u32);
        for t in tensors {
            put_u32(&mut out, t.rows() as u32);
            put_u32(&mut out, t.cols() as u32);
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a TPSW weights file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported weights version {version}")));
        }
        let mut e = [0usize; 6];
        for v in &mut e {
            *v = r.u32()? as usize;
        }
        let mut d = [0usize; 6];
        for v in &mut d {
            *v = r.u32()? as usize;
        }
        let field_hidden = r.u32()? as usize;
        let n_stages = r.u32()? as usize;
        if n_stages > 64 {
            return Err(Error::Format(format!("implausible stage count {n_stages}")));
        }
        let stage_channels = (0..n_stages).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let pool = r.u32()? as usize;
        let all_dims = e.iter().chain(&d).chain(&stage_channels).chain([&field_hidden, &pool]);
        if all_dims.into_iter().any(|&v| v > MAX_DIM) {
            return Err(Error::Format(format!("dimension above {MAX_DIM} in weights metadata")));
        }
        let (base, enc_seed, dec_seed, field_seed, fx_seed) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?, r.u64()?);
        let format_err = |e: Error| Error::Format(format!("invalid weights metadata: {e}"));
        let encoder_dims = EncoderDims {
            image_size: e[0],
            patch: e[1],
            dim: e[2],
            blocks: e[3],
            heads: e[4],
            mlp_hidden: e[5],
        };
        let decoder_dims = DecoderDims {
            layers: d[0],
            heads: d[1],
            dim: d[2],
            res: d[3],
            channels: d[4],
            mlp_hidden: d[5],
        };
        let mut w = Weights {
            seed: base,
            encoder: EncoderWeights::zeros(encoder_dims).map_err(format_err)?,
            decoder: DecoderWeights::zeros(decoder_dims).map_err(format_err)?,
            field: FieldMlpWeights::zeros(decoder_dims.channels, field_hidden),
            extractor: FeatureExtractor::zeros(&stage_channels, pool, fx_seed).map_err(format_err)?,
        };
        let expected = Seeds::from_base(base);
        if (enc_seed, dec_seed, field_seed) != (expected.encoder, expected.decoder, expected.field) {
            return Err(Error::Format("component seeds do not derive from the base seed".into()));
        }

        let count = r.u32()? as usize;
        let mut slots = w.encoder.tensors_mut();
        slots.extend(w.decoder.tensors_mut());
        slots.extend(w.field.tensors_mut());
        slots.extend(w.extractor.tensors_mut());
        if count != slots.len() {
            return Err(Error::Format(format!(
                "expected {} tensors for these dimensions, file has {count}",
                slots.len()
            )));
        }
        for (i, slot) in slots.into_iter().enumerate() {
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            if (rows, cols) != (slot.rows(), slot.cols()) {
                return Err(Error::Format(format!(
                    "tensor {i} is {rows}x{cols}, expected {}x{}",
                    slot.rows(),
                    slot.cols()
                )));
            }
            let raw = r.take(rows * cols * 4)?;
            for (dst, chunk) in slot.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
                if !v.is_finite() {
                    return Err(Error::Format(format!("tensor {i} holds a non-finite value")));
                }
                *dst = v as f64;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("file truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
