//! RGB images with components in [0, 1], and binary PPM (P6) I/O.

use std::fs;
use std::path::Path;

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    rgb: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: [f64; 3]) -> Result<Self> {
        ensure!(width >= 1 && height >= 1, "image must be at least 1x1");
        Ok(Self {
            width,
            height,
            rgb: vec![clamp_rgb(fill); width * height],
        })
    }

    /// Builds an image from row-major pixels, clamping every component to [0, 1].
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        ensure!(width >= 1 && height >= 1, "image must be at least 1x1");
        ensure!(
            pixels.len() == width * height,
            "image {width}x{height} needs {} pixels, got {}",
            width * height,
            pixels.len()
        );
        Ok(Self {
            width,
            height,
            rgb: pixels.into_iter().map(clamp_rgb).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.rgb
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.rgb[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        self.rgb[y * self.width + x] = clamp_rgb(c);
    }

    pub fn mean(&self) -> f64 {
        let sum: f64 = self.rgb.iter().flat_map(|p| p.iter()).sum();
        sum / (3 * self.rgb.len()) as f64
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.rgb.len() * 3);
        for p in &self.rgb {
            for &c in p {
                out.push(quantize(c));
            }
        }
        out
    }

    pub fn from_ppm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while cursor < bytes.len() && bytes[cursor].is_ascii_whitespace() {
                cursor += 1;
            }
            if cursor < bytes.len() && bytes[cursor] == b'#' {
                while cursor < bytes.len() && bytes[cursor] != b'\n' {
                    cursor += 1;
                }
                continue;
            }
            let start = cursor;
            while cursor < bytes.len() && !bytes[cursor].is_ascii_whitespace() {
                cursor += 1;
            }
            if start == cursor {
                return Err(Error::Format("truncated PPM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..cursor]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        cursor += 1;
        if fields[0] != "P6" {
            return Err(Error::Format(format!("expected P6 magic, got {:?}", fields[0])));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PPM {what}: {s:?}")))
        };
        let width = parse(&fields[1], "width")?;
        let height = parse(&fields[2], "height")?;
        let maxval = parse(&fields[3], "maxval")?;
        if maxval != 255 {
            return Err(Error::Format(format!("only 8-bit PPM supported, maxval {maxval}")));
        }
        let need = width * height * 3;
        let raster = bytes
            .get(cursor..cursor + need)
            .ok_or_else(|| Error::Format("truncated PPM raster".into()))?;
        let pixels = raster
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]].map(|b| f64::from(b) / 255.0))
            .collect();
        Image::from_pixels(width, height, pixels)
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm_bytes())?;
        Ok(())
    }

    pub fn load_ppm(path: &Path) -> Result<Self> {
        Image::from_ppm_bytes(&fs::read(path)?)
    }
}

fn clamp_rgb(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
}

fn quantize(c: f64) -> u8 {
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_of_quantized_image() {
        let pixels = (0..12)
            .map(|i| [i as f64 / 255.0, (200 - i) as f64 / 255.0, 1.0])
            .collect();
        let img = Image::from_pixels(4, 3, pixels).unwrap();
        let back = Image::from_ppm_bytes(&img.to_ppm_bytes()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn values_are_clamped() {
        let img = Image::from_pixels(1, 1, vec![[-1.0, 2.0, 0.25]]).unwrap();
        assert_eq!(img.get(0, 0), [0.0, 1.0, 0.25]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            Image::from_ppm_bytes(b"P5\n1 1\n255\n\0"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            Image::from_ppm_bytes(b"P6\n2 2\n255\n\0\0\0"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = Image::from_ppm_bytes(b"P6\n# made by hand\n1 1\n255\n\xff\x00\x80").unwrap();
        assert_eq!(img.get(0, 0)[0], 1.0);
    }
}
