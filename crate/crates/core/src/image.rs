//! Plain RGB raster used between decoding and the networks.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Interleaved RGB, row-major, channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape("image", format!("{height}x{width} RGB needs {} values, got {}", height * width * 3, data.len())));
        }
        Ok(RgbImage { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        RgbImage { height, width, data }
    }

    pub fn is_empty(&self) -> bool {
        self.height == 0 || self.width == 0
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec. 601 luma.
    pub fn luma(&self) -> Vec<f64> {
        self.data.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect()
    }

    /// `[3, H, W]` tensor in `[-1, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let n = self.height * self.width;
        let mut planar = alloc::vec![0.0; 3 * n];
        for (i, p) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                planar[c * n + i] = 2.0 * p[c] - 1.0;
            }
        }
        Tensor::new(&[3, self.height, self.width], planar).expect("extent checked at construction")
    }

    /// Inverse of [`RgbImage::to_tensor`], clamping to `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.chw("image")?;
        if c != 3 {
            return Err(Error::shape("image", format!("expected 3 channels, got {c}")));
        }
        let n = h * w;
        let d = t.data();
        let mut data = Vec::with_capacity(3 * n);
        for i in 0..n {
            for ch in 0..3 {
                data.push(((d[ch * n + i] + 1.0) * 0.5).clamp(0.0, 1.0));
            }
        }
        Ok(RgbImage { height: h, width: w, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip() {
        let data: Vec<f64> = (0..2 * 3 * 3).map(|i| i as f64 / 17.0).collect();
        let img = RgbImage::new(2, 3, data).unwrap();
        let back = RgbImage::from_tensor(&img.to_tensor()).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_length() {
        assert!(RgbImage::new(2, 2, alloc::vec![0.0; 11]).is_err());
    }
}
