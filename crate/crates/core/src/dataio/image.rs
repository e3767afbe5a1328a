//! In-memory images, loading with bilinear resizing, and PPM output.

use std::io::Write;
use std::path::Path;

use super::DataError;
use crate::ndiff::Tensor;

/// Interleaved `height x width x channels` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, DataError> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(DataError::Image(format!(
                "{height}x{width}x{channels} image cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, 3, data).expect("positive extents")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + channel] = value;
    }

    /// Channel-major `(channels, height, width)` tensor for the network.
    pub fn to_chw(&self) -> Tensor {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.data.len()];
        for (p, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + p] = v;
            }
        }
        Tensor::new(vec![self.channels, self.height, self.width], out).expect("positive extents")
    }

    /// Bilinear resampling with pixel-center alignment and edge clamping.
    /// Same-size input is returned unchanged.
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
            let scale = inp as f64 / out as f64;
            (0..out)
                .map(|i| {
                    let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                    let lo = src.floor() as usize;
                    let hi = (lo + 1).min(inp - 1);
                    (lo, hi, src - lo as f64)
                })
                .collect()
        };
        let rows = axis(height, self.height);
        let cols = axis(width, self.width);
        let mut data = Vec::with_capacity(height * width * self.channels);
        for &(r0, r1, fr) in &rows {
            for &(c0, c1, fc) in &cols {
                for ch in 0..self.channels {
                    let top = self.get(r0, c0, ch) * (1.0 - fc) + self.get(r0, c1, ch) * fc;
                    let bottom = self.get(r1, c0, ch) * (1.0 - fc) + self.get(r1, c1, ch) * fc;
                    data.push(top * (1.0 - fr) + bottom * fr);
                }
            }
        }
        Image::new(height, width, self.channels, data).expect("positive extents")
    }

    /// 8-bit quantization: `round(255 v)` clamped to `0..=255`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Binary PPM (`P6`) bytes. Requires three channels.
    pub fn to_ppm(&self) -> Result<Vec<u8>, DataError> {
        if self.channels != 3 {
            return Err(DataError::Image(format!(
                "PPM output needs 3 channels, image has {}",
                self.channels
            )));
        }
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_rgb8());
        Ok(out)
    }

    pub fn save_ppm(&self, path: &Path) -> Result<(), DataError> {
        let bytes = self.to_ppm()?;
        let mut f = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
        f.write_all(&bytes).map_err(|e| DataError::io(path, e))
    }
}

/// Decodes an image file (PPM/PGM/PNG), converts to RGB scaled by 1/255 and
/// bilinearly resizes to `target x target`.
pub fn load_image(path: &Path, target: usize) -> Result<Image, DataError> {
    let decoded = image::open(path)
        .map_err(|e| DataError::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = decoded.dimensions();
    let data = decoded.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
    let img = Image::new(h as usize, w as usize, 3, data)
        .map_err(|e| DataError::Image(format!("{}: {e}", path.display())))?;
    Ok(img.resize(target, target))
}
