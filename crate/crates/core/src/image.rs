//! Planar (`[c, h, w]`) images with values in `[0, 1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::arg(format!("empty image {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(
                "image",
                format!("{channels}x{height}x{width} needs {} values, got {}", channels * height * width, data.len()),
            ));
        }
        Ok(Image { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Image { channels, height, width, data: vec![value; channels * height * width] }
    }

    /// From 8-bit planar samples, `v / 255`.
    pub fn from_u8(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Image::new(channels, height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// Rounds back to 8-bit samples; exact for images built by [`from_u8`](Self::from_u8).
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    /// As a `[1, c, h, w]` network input.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[1, self.channels, self.height, self.width], self.data.clone()).expect("image dims")
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Image> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::arg(format!("crop {h}x{w} at ({top},{left}) exceeds {}x{}", self.height, self.width)));
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            for y in top..top + h {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + w]);
            }
        }
        Image::new(self.channels, h, w, data)
    }

    /// Zero border of `pad` pixels on every side.
    pub fn pad(&self, pad: usize) -> Image {
        let (h, w) = (self.height + 2 * pad, self.width + 2 * pad);
        let mut out = Image::filled(self.channels, h, w, 0.0);
        for c in 0..self.channels {
            for y in 0..self.height {
                let src = &self.data[(c * self.height + y) * self.width..][..self.width];
                let dst = (c * h + y + pad) * w + pad;
                out.data[dst..dst + self.width].copy_from_slice(src);
            }
        }
        out
    }

    /// Bilinear resize, per channel.
    pub fn resize(&self, h: usize, w: usize) -> Image {
        if h == self.height && w == self.width {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            data.extend(bilinear_resize(self.plane(c), self.height, self.width, h, w));
        }
        Image { channels: self.channels, height: h, width: w, data }
    }

    /// Center square crop followed by a resize to `side × side`.
    pub fn center_crop_resize(&self, side: usize) -> Image {
        let s = self.height.min(self.width);
        let top = (self.height - s) / 2;
        let left = (self.width - s) / 2;
        self.crop(top, left, s, s).expect("center crop fits").resize(side, side)
    }
}

/// Bilinear interpolation with half-pixel centers (`src = (dst + ½)·scale − ½`),
/// clamped at the borders.
pub fn bilinear_resize(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w);
    let ys: Vec<(usize, usize, f32)> = (0..oh).map(|y| source_coord(y, h, oh)).collect();
    let xs: Vec<(usize, usize, f32)> = (0..ow).map(|x| source_coord(x, w, ow)).collect();
    let mut out = Vec::with_capacity(oh * ow);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

fn source_coord(d: usize, n: usize, on: usize) -> (usize, usize, f32) {
    let s = ((d as f64 + 0.5) * n as f64 / on as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, (s - i0 as f64) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_survives_resize() {
        let img = Image::filled(3, 5, 7, 0.25);
        let r = img.resize(11, 3);
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn upsample_preserves_linear_ramp_interior() {
        let src: Vec<f32> = (0..4).map(|x| x as f32).collect();
        let out = bilinear_resize(&src, 1, 4, 1, 8);
        // interior samples sit halfway between neighbours at quarter offsets
        assert!((out[1] - 0.25).abs() < 1e-6);
        assert!((out[2] - 0.75).abs() < 1e-6);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[7], 3.0);
    }

    #[test]
    fn u8_round_trip_is_exact() {
        let bytes: Vec<u8> = (0..=255).collect();
        let img = Image::from_u8(1, 16, 16, &bytes).unwrap();
        assert_eq!(img.to_u8(), bytes);
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let img = Image::new(2, 3, 4, (0..24).map(|v| v as f32 / 24.0).collect()).unwrap();
        assert_eq!(img.pad(3).crop(3, 3, 3, 4).unwrap(), img);
    }
}
