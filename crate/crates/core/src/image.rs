//! Intensity and colour images, sub-pixel sampling and pyramids.

use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Linear RGB triple in `[0, 1]`.
pub type Rgb = [f64; 3];

pub const MAX_PYRAMID_LEVELS: usize = 6;

/// Luma weights applied to RGB when deriving the tracking channel.
pub const LUMA: Rgb = [0.299, 0.587, 0.114];

/// Row-major grayscale image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl IntensityImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid("pixel count does not match dimensions"));
        }
        if !pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)) {
            return Err(Error::invalid("intensities must be finite and within [0, 1]"));
        }
        Ok(Self { width, height, pixels })
    }

    /// Builds an image from a generator; values are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                pixels.push(if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Applies `f` to every pixel and clamps back into `[0, 1]`.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self::from_fn(self.width, self.height, |x, y| f(self.get(x, y)))
    }

    /// Central-difference gradient magnitude on the integer grid. Pixels on the
    /// one-pixel border get zero.
    pub fn gradient_magnitude_map(&self) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut out = alloc::vec![0.0; w * h];
        if w < 3 || h < 3 {
            return out;
        }
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let gx = 0.5 * (self.get(x + 1, y) - self.get(x - 1, y));
                let gy = 0.5 * (self.get(x, y + 1) - self.get(x, y - 1));
                out[y * w + x] = math::sqrt(gx * gx + gy * gy);
            }
        }
        out
    }
}

/// Row-major colour image.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::invalid("colour image dimensions do not match pixel count"));
        }
        if !pixels.iter().flatten().all(|c| c.is_finite()) {
            return Err(Error::invalid("colour values must be finite"));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Self { width, height, pixels: alloc::vec![color; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    /// Grayscale conversion with `0.299 R + 0.587 G + 0.114 B`.
    pub fn to_luma(&self) -> IntensityImage {
        IntensityImage::from_fn(self.width, self.height, |x, y| {
            let c = self.get(x, y);
            LUMA[0] * c[0] + LUMA[1] * c[1] + LUMA[2] * c[2]
        })
    }

    /// Bilinear colour lookup with coordinates clamped to the image.
    pub fn sample_clamped(&self, u: f64, v: f64) -> Rgb {
        let u = u.clamp(0.0, (self.width - 1) as f64);
        let v = v.clamp(0.0, (self.height - 1) as f64);
        let (x0, x1, fx) = lattice(u, self.width);
        let (y0, y1, fy) = lattice(v, self.height);
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.get(x0, y0)[c] * (1.0 - fx) + self.get(x1, y0)[c] * fx;
            let bottom = self.get(x0, y1)[c] * (1.0 - fx) + self.get(x1, y1)[c] * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
        out
    }
}

#[inline]
fn lattice(t: f64, len: usize) -> (usize, usize, f64) {
    let f = math::floor(t);
    let i0 = f as usize;
    if i0 + 1 >= len {
        (len - 1, len - 1, 0.0)
    } else {
        (i0, i0 + 1, t - f)
    }
}

/// Bilinear interpolation of the four pixels surrounding `(u, v)`.
pub fn bilinear_sample(image: &IntensityImage, u: f64, v: f64) -> Result<f64> {
    let (w, h) = (image.width, image.height);
    if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return Err(Error::OutOfBounds { u, v, width: w, height: h });
    }
    let (x0, x1, fx) = lattice(u, w);
    let (y0, y1, fy) = lattice(v, h);
    let top = image.get(x0, y0) * (1.0 - fx) + image.get(x1, y0) * fx;
    let bottom = image.get(x0, y1) * (1.0 - fx) + image.get(x1, y1) * fx;
    Ok(top * (1.0 - fy) + bottom * fy)
}

/// Central differences of the bilinearly sampled image, one pixel apart.
pub fn image_gradient(image: &IntensityImage, u: f64, v: f64) -> Result<(f64, f64)> {
    let (w, h) = (image.width as f64, image.height as f64);
    if !(u >= 1.0 && v >= 1.0 && u <= w - 2.0 && v <= h - 2.0) {
        return Err(Error::OutOfBounds { u, v, width: image.width, height: image.height });
    }
    let gx = 0.5 * (bilinear_sample(image, u + 1.0, v)? - bilinear_sample(image, u - 1.0, v)?);
    let gy = 0.5 * (bilinear_sample(image, u, v + 1.0)? - bilinear_sample(image, u, v - 1.0)?);
    Ok((gx, gy))
}

/// Coarse-to-fine image stack; level 0 is the finest.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePyramid {
    levels: Vec<IntensityImage>,
}

impl ImagePyramid {
    pub fn levels(&self) -> &[IntensityImage] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &IntensityImage {
        &self.levels[l]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn finest(&self) -> &IntensityImage {
        &self.levels[0]
    }
}

/// Builds a pyramid by repeated 2×2 box-filter downsampling.
pub fn build_pyramid(image: &IntensityImage, levels: usize) -> Result<ImagePyramid> {
    if !(1..=MAX_PYRAMID_LEVELS).contains(&levels) {
        return Err(Error::invalid("pyramid must have between 1 and 6 levels"));
    }
    let min_side = 1usize << (levels - 1);
    if image.width < min_side || image.height < min_side {
        return Err(Error::invalid("image too small for the requested pyramid depth"));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(image.clone());
    for _ in 1..levels {
        let prev = out.last().expect("non-empty");
        let (w, h) = (prev.width / 2, prev.height / 2);
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let s = prev.get(2 * x, 2 * y)
                    + prev.get(2 * x + 1, 2 * y)
                    + prev.get(2 * x, 2 * y + 1)
                    + prev.get(2 * x + 1, 2 * y + 1);
                pixels.push(0.25 * s);
            }
        }
        out.push(IntensityImage { width: w, height: h, pixels });
    }
    Ok(ImagePyramid { levels: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> IntensityImage {
        IntensityImage::from_fn(w, h, |x, _| x as f64 / w as f64)
    }

    #[test]
    fn rejects_bad_pixels() {
        assert!(IntensityImage::new(2, 2, alloc::vec![0.0; 3]).is_err());
        assert!(IntensityImage::new(2, 1, alloc::vec![0.0, 1.5]).is_err());
        assert!(IntensityImage::new(2, 1, alloc::vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn lattice_points_are_exact() {
        let img = IntensityImage::from_fn(5, 4, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(bilinear_sample(&img, x as f64, y as f64).unwrap(), img.get(x, y));
            }
        }
    }

    #[test]
    fn midpoint_is_average() {
        let img = IntensityImage::new(2, 2, alloc::vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(bilinear_sample(&img, 0.5, 0.3).unwrap(), 0.5);
    }

    #[test]
    fn out_of_bounds_sample() {
        let img = ramp(4, 4);
        assert!(matches!(bilinear_sample(&img, -0.1, 1.0), Err(Error::OutOfBounds { .. })));
        assert!(matches!(bilinear_sample(&img, 3.0001, 1.0), Err(Error::OutOfBounds { .. })));
        assert!(bilinear_sample(&img, 3.0, 3.0).is_ok());
    }

    #[test]
    fn gradient_of_constant_and_ramp() {
        let c = IntensityImage::from_fn(8, 8, |_, _| 0.4);
        assert_eq!(image_gradient(&c, 3.3, 4.1).unwrap(), (0.0, 0.0));
        let r = ramp(16, 8);
        let (gx, gy) = image_gradient(&r, 5.25, 3.5).unwrap();
        assert!((gx - 1.0 / 16.0).abs() < 1e-9 && gy.abs() < 1e-9);
        assert!(image_gradient(&r, 0.5, 3.0).is_err());
        assert!(image_gradient(&r, 5.0, 6.5).is_err());
    }

    #[test]
    fn pyramid_examples() {
        let img = ramp(9, 7);
        let p = build_pyramid(&img, 1).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.finest(), &img);

        let c = IntensityImage::from_fn(4, 4, |_, _| 0.3);
        let p = build_pyramid(&c, 3).unwrap();
        for l in p.levels() {
            assert!(l.pixels().iter().all(|&v| v == 0.3));
        }
        assert!(build_pyramid(&c, 4).is_err());
        assert!(build_pyramid(&c, 0).is_err());
        assert!(build_pyramid(&ramp(64, 64), 7).is_err());
    }

    #[test]
    fn luma_weights() {
        let img = RgbImage::new(1, 1, alloc::vec![[1.0, 0.5, 0.25]]).unwrap();
        let g = img.to_luma();
        assert!((g.get(0, 0) - (0.299 + 0.2935 + 0.0285)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pyramid_sizes_floor_halve(w in 32usize..80, h in 32usize..80, levels in 1usize..=6) {
            let img = IntensityImage::from_fn(w, h, |x, y| ((x ^ y) & 1) as f64);
            let p = build_pyramid(&img, levels).unwrap();
            prop_assert_eq!(p.len(), levels);
            for l in 1..levels {
                prop_assert_eq!(p.level(l).width(), p.level(l - 1).width() / 2);
                prop_assert_eq!(p.level(l).height(), p.level(l - 1).height() / 2);
            }
        }

        #[test]
        fn bilinear_bounded_by_neighbours(seed in 0u64..1000, u in 0.0f64..6.0, v in 0.0f64..4.0) {
            let img = IntensityImage::from_fn(7, 5, |x, y| {
                let h = (x as u64 * 31 + y as u64 * 17 + seed).wrapping_mul(2654435761) % 1000;
                h as f64 / 999.0
            });
            let s = bilinear_sample(&img, u, v).unwrap();
            let (x0, y0) = (u as usize, v as usize);
            let (x1, y1) = ((x0 + 1).min(6), (y0 + 1).min(4));
            let n = [img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1)];
            let lo = n.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = n.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
        }
    }
}
