use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ImageRGB;
use crate::error::{Error, Result};

/// Smallest crop side `sample_shared_crops` will produce.
pub const MIN_CROP_SIDE: usize = 16;

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSpec {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl CropSpec {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self { x0, y0, w, h }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self { x0: 0, y0: 0, w: width, h: height }
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.w > 0 && self.h > 0 && self.x0 + self.w <= width && self.y0 + self.h <= height
    }
}

/// Samples `count` square crops shared between a synthesized image and its
/// ground truth. Sides are uniform over `scale_range * min(height, width)`
/// (integer pixels), offsets uniform subject to containment.
pub fn sample_shared_crops(
    rng_seed: u64,
    height: usize,
    width: usize,
    count: usize,
    scale_range: (f64, f64),
) -> Result<Vec<CropSpec>> {
    let (lo, hi) = scale_range;
    if count == 0 {
        return Err(Error::invalid("crop count must be at least 1"));
    }
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::invalid(format!("crop scale range ({lo}, {hi}) not within (0, 1]")));
    }
    let short = height.min(width) as f64;
    let side_lo = (lo * short).ceil() as usize;
    let side_hi = (hi * short).floor() as usize;
    if side_lo < MIN_CROP_SIDE || side_hi < side_lo {
        return Err(Error::invalid(format!(
            "{height}x{width} image too small for crops of scale {lo}..{hi} (minimum side {MIN_CROP_SIDE})"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let crops = (0..count)
        .map(|_| {
            let side = rng.random_range(side_lo..=side_hi);
            let x0 = rng.random_range(0..=width - side);
            let y0 = rng.random_range(0..=height - side);
            CropSpec { x0, y0, w: side, h: side }
        })
        .collect();
    Ok(crops)
}

/// Exact sub-rectangle copy.
pub fn apply_crop(image: &ImageRGB, crop: &CropSpec) -> Result<ImageRGB> {
    check_crop(image, crop)?;
    let mut data = Vec::with_capacity(crop.w * crop.h * 3);
    let row_len = image.width() * 3;
    for y in crop.y0..crop.y0 + crop.h {
        let start = y * row_len + crop.x0 * 3;
        data.extend_from_slice(&image.data()[start..start + crop.w * 3]);
    }
    ImageRGB::new(crop.h, crop.w, data)
}

/// Writes `patch` into `image` at the crop's offset; the inverse of [`apply_crop`].
pub fn paste(image: &mut ImageRGB, patch: &ImageRGB, x0: usize, y0: usize) -> Result<()> {
    let crop = CropSpec::new(x0, y0, patch.width(), patch.height());
    check_crop(image, &crop)?;
    for y in 0..patch.height() {
        for x in 0..patch.width() {
            image.set_pixel(y0 + y, x0 + x, patch.pixel(y, x));
        }
    }
    Ok(())
}

/// Adds a gradient over a crop's pixels back into a full-image gradient buffer.
pub(crate) fn scatter_add_crop(full: &mut [f64], width: usize, crop: &CropSpec, grad: &[f64]) {
    debug_assert_eq!(grad.len(), crop.w * crop.h * 3);
    for y in 0..crop.h {
        let dst = ((crop.y0 + y) * width + crop.x0) * 3;
        let src = y * crop.w * 3;
        for (d, g) in full[dst..dst + crop.w * 3].iter_mut().zip(&grad[src..src + crop.w * 3]) {
            *d += g;
        }
    }
}

fn check_crop(image: &ImageRGB, crop: &CropSpec) -> Result<()> {
    if crop.fits(image.height(), image.width()) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "crop {crop:?} outside {}x{} image",
            image.height(),
            image.width()
        )))
    }
}
