//! Interleaved RGB float images with channel values in `[0, 1]`.

use std::path::Path;

use crate::error::{invalid, Error, Result};

/// An `height × width × 3` image stored row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, fill: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&fill);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(invalid!(
                "raw buffer has {} values, expected {}x{}x3",
                data.len(),
                height,
                width
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, px: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.height, self.width, |y, x| self.pixel(y, self.width - 1 - x))
    }

    /// Copies the `h × w` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(invalid!(
                "crop {}x{} at ({}, {}) outside {}x{} image",
                h,
                w,
                y0,
                x0,
                self.height,
                self.width
            ));
        }
        Ok(Image::from_fn(h, w, |y, x| self.pixel(y0 + y, x0 + x)))
    }

    /// Bilinear resample of the whole image to `out_h × out_w`, pixel-center aligned.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Image {
        if (out_h, out_w) == (self.height, self.width) {
            return self.clone();
        }
        self.resample_region(0.0, 0.0, self.height as f64, self.width as f64, out_h, out_w)
    }

    /// Bilinear resample of the (possibly fractional) region `[y, y+h) × [x, x+w)`
    /// to `out_h × out_w`. Samples outside the image replicate the border.
    pub fn resample_region(
        &self,
        y: f64,
        x: f64,
        h: f64,
        w: f64,
        out_h: usize,
        out_w: usize,
    ) -> Image {
        let sy = h / out_h as f64;
        let sx = w / out_w as f64;
        let max_y = (self.height - 1) as f64;
        let max_x = (self.width - 1) as f64;
        let cols: Vec<(usize, usize, f32)> = (0..out_w)
            .map(|ox| {
                let fx = (x + (ox as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                (x0, x1, (fx - x0 as f64) as f32)
            })
            .collect();
        let mut data = Vec::with_capacity(out_h * out_w * 3);
        for oy in 0..out_h {
            let fy = (y + (oy as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = (fy - y0 as f64) as f32;
            for &(x0, x1, tx) in &cols {
                let a = self.pixel(y0, x0);
                let b = self.pixel(y0, x1);
                let c = self.pixel(y1, x0);
                let d = self.pixel(y1, x1);
                for ch in 0..3 {
                    let top = a[ch] + (b[ch] - a[ch]) * tx;
                    let bottom = c[ch] + (d[ch] - c[ch]) * tx;
                    data.push(top + (bottom - top) * ty);
                }
            }
        }
        Image {
            height: out_h,
            width: out_w,
            data,
        }
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.dims(), other.dims());
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        total / self.data.len() as f64
    }

    /// Peak signal-to-noise ratio in dB with peak value 1.
    pub fn psnr(&self, other: &Image) -> f64 {
        assert_eq!(self.dims(), other.dims());
        let mse: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = (a - b) as f64;
                d * d
            })
            .sum::<f64>()
            / self.data.len() as f64;
        if mse == 0.0 {
            f64::INFINITY
        } else {
            -10.0 * mse.log10()
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Image {
        Image {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Image> {
        let dynamic = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Codec(other),
        })?;
        Ok(Image::from_rgb8(&dynamic.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Codec(other),
            })
    }
}
