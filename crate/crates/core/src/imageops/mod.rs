//! Image containers, crops, four-panel composition and Lab color alignment.
//!
//! Every operation here is a pure function of its inputs.

mod color;
mod crop;
mod histogram;
mod image;
mod panel;
mod resample;

pub use color::{lab_pixel_to_srgb, lab_to_rgb, rgb_to_lab, srgb_pixel_to_lab, LabImage, LAB_RANGES};
pub use crop::{apply_crop, paste, sample_shared_crops, CropSpec, MIN_CROP_SIDE};
pub(crate) use crop::scatter_add_crop;
pub use histogram::{bin_width, histogram_match_lab, lab_wasserstein, match_channel, match_lab, wasserstein1, BINS};
pub use image::ImageRGB;
pub use panel::{compose_four_panel, split_four_panel, CameraId, MultiViewSet};
pub use resample::Resampler;
