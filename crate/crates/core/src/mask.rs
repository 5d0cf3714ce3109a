//! Binary pixel masks and their on-disk encodings (PNG, run-length JSON,
//! overlay images).

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PromiError, Result};

/// `height × width` binary mask, row-major, values 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl SegmentationMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    /// Any non-zero input byte becomes 1.
    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(PromiError::Shape(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        let data = data.into_iter().map(|v| u8::from(v != 0)).collect();
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = u8::from(value);
    }

    pub fn count_ones(&self) -> u64 {
        self.data.iter().map(|&v| u64::from(v)).sum()
    }

    pub fn inverted(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// Writes an 8-bit grayscale PNG with foreground = 255.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| PromiError::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let pixels: Vec<u8> = self.data.iter().map(|&v| v * 255).collect();
        encoder
            .write_header()
            .and_then(|mut w| w.write_image_data(&pixels))
            .map_err(|e| PromiError::io(path, std::io::Error::other(e)))
    }

    /// Reads a single-channel (or RGB/RGBA, first channel used) PNG; any
    /// non-zero sample is foreground.
    pub fn load_png(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| PromiError::io(path, e))?;
        let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder
            .read_info()
            .map_err(|e| PromiError::Format(format!("{}: {e}", path.display())))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| PromiError::Format(format!("{}: image too large", path.display())))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| PromiError::Format(format!("{}: {e}", path.display())))?;
        let channels = info.color_type.samples();
        let (w, h) = (info.width as usize, info.height as usize);
        let data = buf[..info.buffer_size()]
            .chunks_exact(channels)
            .map(|px| u8::from(px[0] != 0))
            .collect();
        Self::from_vec(h, w, data)
    }

    pub fn to_rle(&self) -> RleMask {
        let mut counts = Vec::new();
        let mut current = 0u8;
        let mut run = 0u64;
        for &v in &self.data {
            if v == current {
                run += 1;
            } else {
                counts.push(run);
                current = v;
                run = 1;
            }
        }
        counts.push(run);
        RleMask {
            height: self.height,
            width: self.width,
            counts,
        }
    }

    /// Alpha-blends foreground pixels in red over an RGB image of the same
    /// size (resampled nearest-neighbour when sizes differ).
    pub fn overlay(&self, source: &image::RgbImage, alpha: f32) -> image::RgbImage {
        let (sw, sh) = source.dimensions();
        let mut out = source.clone();
        for (x, y, px) in out.enumerate_pixels_mut() {
            let my = (y as usize * self.height) / sh as usize;
            let mx = (x as usize * self.width) / sw as usize;
            if self.get(my, mx) {
                let tint = [255.0f32, 0.0, 0.0];
                for (v, t) in px.0.iter_mut().zip(tint) {
                    *v = ((1.0 - alpha) * f32::from(*v) + alpha * t).round() as u8;
                }
            }
        }
        out
    }
}

/// Row-major run-length encoding. Runs alternate starting with a run of
/// zeros (which may be empty).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u64>,
}

impl RleMask {
    pub fn decode(&self) -> Result<SegmentationMask> {
        let total: u64 = self.counts.iter().sum();
        if total != (self.height * self.width) as u64 {
            return Err(PromiError::Format(format!(
                "rle runs cover {total} pixels, mask has {}",
                self.height * self.width
            )));
        }
        let mut data = Vec::with_capacity(self.height * self.width);
        for (i, &run) in self.counts.iter().enumerate() {
            data.extend(std::iter::repeat_n((i % 2) as u8, run as usize));
        }
        SegmentationMask::from_vec(self.height, self.width, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_starts_with_zero_run() {
        let m = SegmentationMask::from_vec(2, 3, vec![1, 1, 0, 0, 0, 1]).unwrap();
        let rle = m.to_rle();
        assert_eq!(rle.counts, vec![0, 2, 3, 1]);
        assert_eq!(rle.decode().unwrap(), m);
    }

    #[test]
    fn rle_rejects_wrong_total() {
        let rle = RleMask {
            height: 2,
            width: 2,
            counts: vec![1, 1],
        };
        assert!(matches!(rle.decode(), Err(PromiError::Format(_))));
    }

    #[test]
    fn png_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let m = SegmentationMask::from_fn(5, 7, |y, x| (x + y) % 3 == 0);
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        m.save_png(&a).unwrap();
        m.save_png(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(SegmentationMask::load_png(&a).unwrap(), m);
    }

    #[test]
    fn overlay_tints_only_foreground() {
        let m = SegmentationMask::from_vec(1, 2, vec![1, 0]).unwrap();
        let src = image::RgbImage::from_pixel(2, 1, image::Rgb([0, 0, 200]));
        let out = m.overlay(&src, 0.5);
        assert_eq!(out.get_pixel(0, 0).0, [128, 0, 100]);
        assert_eq!(out.get_pixel(1, 0).0, [0, 0, 200]);
    }
}
