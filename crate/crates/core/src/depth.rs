//! Normalized single-channel depth maps.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;
use crate::tensor::Tensor;

/// Square depth map with values in `[-1, 1]`: `-1` is the near cube face,
/// `+1` is background / far face. Row 0 is the top of the image.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    res: usize,
    pixels: Vec<f32>,
}

pub const BACKGROUND: f32 = 1.0;

impl DepthImage {
    pub fn background(res: usize) -> Self {
        DepthImage { res, pixels: vec![BACKGROUND; res * res] }
    }

    /// Values are clamped into `[-1, 1]`; non-finite values become background.
    pub fn from_pixels(res: usize, pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), res * res, "pixel count does not match resolution");
        let pixels = pixels
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(-1.0, 1.0) } else { BACKGROUND })
            .collect();
        DepthImage { res, pixels }
    }

    pub fn resolution(&self) -> usize {
        self.res
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.res + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.pixels[row * self.res + col] = v.clamp(-1.0, 1.0);
    }

    pub fn is_foreground(&self, row: usize, col: usize) -> bool {
        self.get(row, col) < BACKGROUND
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&v| v < BACKGROUND).count()
    }

    /// Bilinear sample at fractional pixel coordinates (pixel centers at
    /// integers) over foreground neighbors only. `None` when less than half
    /// of the interpolation weight falls on foreground, so silhouettes keep
    /// their size and edges never blend toward the background depth.
    pub fn sample_foreground(&self, row: f64, col: f64) -> Option<f64> {
        let r0 = libm::floor(row);
        let c0 = libm::floor(col);
        let (fr, fc) = (row - r0, col - c0);
        let mut weight = 0.0;
        let mut acc = 0.0;
        for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
            for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
                let (r, c) = (r0 + dr, c0 + dc);
                if r < 0.0 || c < 0.0 || r >= self.res as f64 || c >= self.res as f64 {
                    continue;
                }
                let v = self.get(r as usize, c as usize);
                if v < BACKGROUND && wr * wc > 0.0 {
                    weight += wr * wc;
                    acc += wr * wc * v as f64;
                }
            }
        }
        (weight >= 0.5).then(|| acc / weight)
    }

    /// Horizontal mirror.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.res {
            out.pixels[r * self.res..(r + 1) * self.res].reverse();
        }
        out
    }

    /// Batch tensor `[N, 1, res, res]` from equally sized images.
    pub fn batch_tensor<S: Real>(images: &[&DepthImage]) -> Tensor<S> {
        let res = images.first().map_or(0, |i| i.res);
        let mut data = Vec::with_capacity(images.len() * res * res);
        for img in images {
            assert_eq!(img.res, res, "mixed resolutions in one batch");
            data.extend(img.pixels.iter().map(|&v| S::from_f32(v)));
        }
        Tensor::from_vec(&[images.len(), 1, res, res], data)
    }

    /// Splits a `[N, 1, res, res]` tensor back into images.
    pub fn from_batch<S: Real>(t: &Tensor<S>) -> Vec<DepthImage> {
        let res = t.shape()[2];
        (0..t.batch()).map(|i| DepthImage::from_pixels(res, t.row(i).iter().map(|v| v.to_f32()).collect())).collect()
    }
}
