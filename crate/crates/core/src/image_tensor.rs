use std::path::Path;

use autograd::{Real, Tensor};
use image::{imageops, ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};

/// `H × W × 3` image with values in `[-1, 1]`, stored row-major and
/// channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!("{} values for a {height}x{width}x3 image", data.len())));
        }
        Ok(ImageTensor { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| value).collect();
        ImageTensor { height, width, data }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Reads an 8-bit image, remapping `p` to `p / 127.5 − 1`.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&p| p as f32 / 127.5 - 1.0).collect();
        ImageTensor { height: h as usize, width: w as usize, data }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self.data.iter().map(|&v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer sized from dimensions")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    /// Largest centered square.
    pub fn center_crop(&self) -> ImageTensor {
        let side = self.height.min(self.width);
        let (top, left) = ((self.height - side) / 2, (self.width - side) / 2);
        let mut out = ImageTensor::filled(side, side, [0.0; 3]);
        for r in 0..side {
            for c in 0..side {
                out.set_pixel(r, c, self.pixel(top + r, left + c));
            }
        }
        out
    }

    /// Box-averages integer reductions exactly; other ratios use a
    /// triangle filter.
    pub fn resize(&self, height: usize, width: usize) -> ImageTensor {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        if self.height % height == 0 && self.width % width == 0 && self.height / height == self.width / width {
            let f = self.height / height;
            let mut out = vec![0.0f32; height * width * 3];
            let norm = 1.0 / (f * f) as f32;
            for r in 0..self.height {
                for c in 0..self.width {
                    let o = ((r / f) * width + c / f) * 3;
                    let p = self.pixel(r, c);
                    for ch in 0..3 {
                        out[o + ch] += p[ch] * norm;
                    }
                }
            }
            return ImageTensor { height, width, data: out };
        }
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer sized from dimensions");
        let resized = imageops::resize(&buf, width as u32, height as u32, imageops::FilterType::Triangle);
        ImageTensor { height, width, data: resized.into_raw() }
    }

    /// Values remapped to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.data.iter().map(|&v| (v as f64 + 1.0) * 0.5).collect()
    }

    pub fn mean_abs_diff(&self, other: &ImageTensor) -> f64 {
        let n = self.data.len() as f64;
        self.data.iter().zip(&other.data).map(|(&a, &b)| (a - b).abs() as f64).sum::<f64>() / n
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Horizontal mirror.
    pub fn flip_horizontal(&self) -> ImageTensor {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                out.set_pixel(r, c, self.pixel(r, self.width - 1 - c));
            }
        }
        out
    }
}

/// Stacks images into a `[B, 3, H, W]` tensor.
pub fn to_batch<R: Real>(images: &[&ImageTensor]) -> Result<Tensor<R>> {
    let first = images.first().ok_or_else(|| Error::Shape("empty image batch".into()))?;
    let (h, w) = first.resolution();
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.resolution() != (h, w) {
            return Err(Error::Shape(format!("mixed resolutions {h}x{w} and {}x{}", img.height, img.width)));
        }
        for ch in 0..3 {
            data.extend(img.data.iter().skip(ch).step_by(3).map(|&v| autograd::lit::<R>(v as f64)));
        }
    }
    Ok(Tensor::new(&[images.len(), 3, h, w], data))
}

/// Splits a `[B, 3, H, W]` tensor into images.
pub fn from_batch<R: Real>(batch: &Tensor<R>) -> Vec<ImageTensor> {
    let s = batch.shape();
    let (b, h, w) = (s[0], s[2], s[3]);
    let plane = h * w;
    (0..b)
        .map(|bi| {
            let src = &batch.data()[bi * 3 * plane..(bi + 1) * 3 * plane];
            let mut data = vec![0.0f32; 3 * plane];
            for ch in 0..3 {
                for p in 0..plane {
                    data[p * 3 + ch] = src[ch * plane + p].to_f32().unwrap_or(f32::NAN);
                }
            }
            ImageTensor { height: h, width: w, data }
        })
        .collect()
}
