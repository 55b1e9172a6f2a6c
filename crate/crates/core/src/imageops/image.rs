use std::path::Path;

use crate::error::{Error, Result};

/// RGB image with `f64` channels in `[0, 1]`, stored row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRGB {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageRGB {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::invalid(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                height * width * 3
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds an image from raw values, clamping each into `[0, 1]`.
    /// Non-finite values are rejected.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite pixel value"));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        assert!(height > 0 && width > 0, "empty image");
        assert!(rgb.iter().all(|c| (0.0..=1.0).contains(c)), "color outside [0, 1]");
        let data = std::iter::repeat_n(rgb, height * width).flatten().collect();
        Self { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        assert!(rgb.iter().all(|c| (0.0..=1.0).contains(c)), "color outside [0, 1]");
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Mean absolute per-channel difference. Panics on mismatched sizes.
    pub fn mean_abs_diff(&self, other: &ImageRGB) -> f64 {
        assert_eq!(self.dims(), other.dims());
        let n = self.data.len() as f64;
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n
    }

    pub fn max_abs_diff(&self, other: &ImageRGB) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Horizontal circular shift: column `x` moves to `(x + dx) mod width`.
    pub fn circular_shift_x(&self, dx: usize) -> ImageRGB {
        let w = self.width;
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..w {
                data.extend(self.pixel(y, (x + w - dx % w) % w));
            }
        }
        ImageRGB { height: self.height, width: w, data }
    }

    /// Quantizes to 8 bits per channel (`byte / 255`), as a PNG round-trip would.
    pub fn quantized(&self) -> ImageRGB {
        let data = self.data.iter().map(|v| to_byte(*v) as f64 / 255.0).collect();
        ImageRGB { height: self.height, width: self.width, data }
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
        Self::new(h as usize, w as usize, data)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|v| to_byte(*v)).collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
        buf.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_bad_sizes() {
        assert!(ImageRGB::new(2, 2, vec![0.5; 12]).is_ok());
        assert!(ImageRGB::new(2, 2, vec![0.5; 11]).is_err());
        assert!(ImageRGB::new(0, 2, vec![]).is_err());
        let mut data = vec![0.5; 12];
        data[3] = 1.5;
        assert!(ImageRGB::new(2, 2, data.clone()).is_err());
        data[3] = f64::NAN;
        assert!(ImageRGB::new(2, 2, data).is_err());
    }

    #[test]
    fn png_round_trip_is_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = ImageRGB::from_fn(9, 11, |y, x| [y as f64 / 9.0, x as f64 / 11.0, 0.3]).unwrap();
        img.save_png(&path).unwrap();
        let back = ImageRGB::load_png(&path).unwrap();
        assert_eq!(back, img.quantized());
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-12);
    }
}
