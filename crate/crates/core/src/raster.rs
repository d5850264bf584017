//! RGB float rasters and boolean masks, plus PNG conversion.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::{Error, Result};

/// H×W×3 image with channels in `[0, 1]`, row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// H×W boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Contract(format!(
                "raster {height}x{width} needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = std::iter::repeat_n(rgb, height * width).flatten().collect();
        Self { height, width, data }
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

    pub fn get(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Build a raster of the same size by mapping source coordinates.
    /// `src(y, x)` returns the source pixel for destination `(y, x)`.
    pub(crate) fn remap(&self, height: usize, width: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut out = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                let (sy, sx) = src(y, x);
                out.extend_from_slice(&self.get(sy, sx));
            }
        }
        Self {
            height,
            width,
            data: out,
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self.data.iter().map(|&v| quantize(v)).collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer matches dims")
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&b| f32::from(b) / 255.0).collect();
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            data,
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| match source {
            image::ImageError::IoError(e) => Error::io(path, e),
            other => Error::Image {
                path: path.to_path_buf(),
                source: other,
            },
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Bilinear resample to `size`×`size`.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let img: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone()).expect("dims");
        let out = image::imageops::resize(&img, width as u32, height as u32, image::imageops::FilterType::Triangle);
        let data = out.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self { height, width, data }
    }

    /// Stable SHA-256 of the dimensions and raw `f32` bits.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Contract(format!(
                "mask {height}x{width} got {} values",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub(crate) fn remap(&self, height: usize, width: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let (sy, sx) = src(y, x);
                data.push(self.get(sy, sx));
            }
        }
        Self { height, width, data }
    }

    /// Intersection over union with another mask of the same size.
    pub fn jaccard(&self, other: &Mask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Number of 4-connected edges between a lesion pixel and a non-lesion
    /// pixel (image border counts as non-lesion).
    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Self {
        let mut out = Self::empty(self.height, self.width);
        let r = radius as isize;
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(y, x) {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (ny, nx) = (y as isize + dy, x as isize + dx);
                        if ny >= 0 && nx >= 0 && (ny as usize) < self.height && (nx as usize) < self.width {
                            out.set(ny as usize, nx as usize, true);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn perimeter(&self) -> usize {
        let mut edges = 0;
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(y, x) {
                    continue;
                }
                let neighbours = [
                    y.checked_sub(1).map(|yy| (yy, x)),
                    (y + 1 < self.height).then_some((y + 1, x)),
                    x.checked_sub(1).map(|xx| (y, xx)),
                    (x + 1 < self.width).then_some((y, x + 1)),
                ];
                edges += neighbours
                    .iter()
                    .filter(|n| n.is_none_or(|(ny, nx)| !self.get(ny, nx)))
                    .count();
            }
        }
        edges
    }

    pub fn to_gray8(&self) -> GrayImage {
        let bytes = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes).expect("dims")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Loads a grayscale PNG; pixels ≥ 128 are lesion. Resized with nearest
    /// neighbour when `size` differs.
    pub fn load_png(path: &Path, height: usize, width: usize) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let mut gray = img.to_luma8();
        if gray.width() as usize != width || gray.height() as usize != height {
            gray = image::imageops::resize(&gray, width as u32, height as u32, image::imageops::FilterType::Nearest);
        }
        let data = gray.pixels().map(|&Luma([v])| v >= 128).collect();
        Self::new(height, width, data)
    }
}
