//! Minimal 8-bit grayscale image container.
//!
//! Pixel `(x, y)` has its center at integer coordinates, origin at the
//! top-left pixel, x to the right and y downward.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1 (got {width}x{height})")]
    EmptyImage { width: u32, height: u32 },
    #[error("pixel buffer holds {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("cannot decode image {path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Row-major 8-bit intensities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(ImageError::BufferSize {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Constant image. Panics on zero dimensions.
    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self::new(width, height, vec![value; width as usize * height as usize])
            .expect("non-empty dimensions")
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels).expect("non-empty dimensions")
    }

    /// Decodes any supported file and converts it to gray with integer-rounded
    /// Rec.601 luma.
    pub fn open(path: &Path) -> Result<Self, ImageError> {
        let decoded = image::open(path).map_err(|source| ImageError::Decode {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_dynamic(&decoded))
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        if let image::DynamicImage::ImageLuma8(gray) = img {
            let (w, h) = gray.dimensions();
            return Self::new(w, h, gray.as_raw().clone()).expect("decoded image is non-empty");
        }
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = rgb
            .pixels()
            .map(|p| rec601_luma(p.0[0], p.0[1], p.0[2]))
            .collect();
        Self::new(w, h, pixels).expect("decoded image is non-empty")
    }

    pub fn save_png(&self, path: &Path) -> Result<(), image::ImageError> {
        image::save_buffer(
            path,
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::L8,
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Pixel value, or `None` outside the image.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> Option<u8> {
        if x < 0 || y < 0 || x >= i64::from(self.width) || y >= i64::from(self.height) {
            None
        } else {
            Some(self.get(x as u32, y as u32))
        }
    }

    #[inline]
    fn get_clamped(&self, x: i64, y: i64) -> u8 {
        let cx = x.clamp(0, i64::from(self.width) - 1) as u32;
        let cy = y.clamp(0, i64::from(self.height) - 1) as u32;
        self.get(cx, cy)
    }

    /// Bilinear interpolation at a subpixel location; `None` if the location
    /// lies outside the pixel-center hull.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x.is_finite() && y.is_finite()) {
            return None;
        }
        let max_x = f64::from(self.width - 1);
        let max_y = f64::from(self.height - 1);
        if x < 0.0 || y < 0.0 || x > max_x || y > max_y {
            return None;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let p = |dx: i64, dy: i64| f64::from(self.get_clamped(x0 + dx, y0 + dy));
        let top = p(0, 0) * (1.0 - fx) + p(1, 0) * fx;
        let bottom = p(0, 1) * (1.0 - fx) + p(1, 1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    /// 5x5 box filter with replicated borders, rounded to nearest integer.
    pub fn box_blur5(&self) -> GrayImage {
        let (w, h) = (i64::from(self.width), i64::from(self.height));
        // separable: horizontal sums then vertical sums
        let mut horiz = vec![0u32; self.pixels.len()];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0u32;
                for dx in -2..=2 {
                    s += u32::from(self.get_clamped(x + dx, y));
                }
                horiz[(y * w + x) as usize] = s;
            }
        }
        let mut out = Vec::with_capacity(self.pixels.len());
        for y in 0..h {
            for x in 0..w {
                let mut s = 0u32;
                for dy in -2..=2 {
                    let yy = (y + dy).clamp(0, h - 1);
                    s += horiz[(yy * w + x) as usize];
                }
                out.push(((s + 12) / 25) as u8);
            }
        }
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: out,
        }
    }
}

/// `round(0.299 R + 0.587 G + 0.114 B)` in integer arithmetic.
pub fn rec601_luma(r: u8, g: u8, b: u8) -> u8 {
    let v = 299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b);
    ((v + 500) / 1000) as u8
}
