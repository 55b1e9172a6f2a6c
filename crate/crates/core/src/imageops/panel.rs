use std::fmt;

use serde::{Deserialize, Serialize};

use super::ImageRGB;
use crate::error::{Error, Result};

/// The four orthogonal camera labels, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraId {
    Front,
    Right,
    Back,
    Left,
}

impl CameraId {
    pub const ALL: [CameraId; 4] = [CameraId::Front, CameraId::Right, CameraId::Back, CameraId::Left];

    pub fn as_str(self) -> &'static str {
        match self {
            CameraId::Front => "front",
            CameraId::Right => "right",
            CameraId::Back => "back",
            CameraId::Left => "left",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Exactly four equally sized views in `CameraId::ALL` order.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewSet {
    views: [ImageRGB; 4],
}

impl MultiViewSet {
    pub fn new(views: [ImageRGB; 4]) -> Result<Self> {
        let dims = views[0].dims();
        if let Some((i, v)) = views.iter().enumerate().find(|(_, v)| v.dims() != dims) {
            return Err(Error::invalid(format!(
                "view {} is {}x{}, expected {}x{}",
                CameraId::ALL[i],
                v.height(),
                v.width(),
                dims.0,
                dims.1
            )));
        }
        Ok(Self { views })
    }

    pub fn from_vec(views: Vec<ImageRGB>) -> Result<Self> {
        let n = views.len();
        let arr: [ImageRGB; 4] = views
            .try_into()
            .map_err(|_| Error::invalid(format!("expected 4 views, got {n}")))?;
        Self::new(arr)
    }

    pub fn views(&self) -> &[ImageRGB; 4] {
        &self.views
    }

    pub fn view(&self, camera: CameraId) -> &ImageRGB {
        &self.views[camera.index()]
    }

    pub fn camera_ids(&self) -> [CameraId; 4] {
        CameraId::ALL
    }

    pub fn dims(&self) -> (usize, usize) {
        self.views[0].dims()
    }

    pub fn into_views(self) -> [ImageRGB; 4] {
        self.views
    }
}

/// Tiles four `H x W` views into a `2H x 2W` image: front top-left, right
/// top-right, back bottom-left, left bottom-right.
pub fn compose_four_panel(views: &MultiViewSet) -> ImageRGB {
    let (h, w) = views.dims();
    let mut data = vec![0.0; 4 * h * w * 3];
    let out_row = 2 * w * 3;
    for (i, view) in views.views().iter().enumerate() {
        let (ty, tx) = (i / 2, i % 2);
        for y in 0..h {
            let dst = (ty * h + y) * out_row + tx * w * 3;
            data[dst..dst + w * 3].copy_from_slice(&view.data()[y * w * 3..(y + 1) * w * 3]);
        }
    }
    ImageRGB::new(2 * h, 2 * w, data).expect("tiles of valid views are valid")
}

/// Exact inverse of [`compose_four_panel`].
pub fn split_four_panel(composite: &ImageRGB) -> Result<MultiViewSet> {
    let (ch, cw) = composite.dims();
    if ch % 2 != 0 || cw % 2 != 0 {
        return Err(Error::invalid(format!("four-panel composite must have even sides, got {ch}x{cw}")));
    }
    let (h, w) = (ch / 2, cw / 2);
    let tiles = (0..4)
        .map(|i| {
            let (ty, tx) = (i / 2, i % 2);
            let mut data = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                let src = ((ty * h + y) * cw + tx * w) * 3;
                data.extend_from_slice(&composite.data()[src..src + w * 3]);
            }
            ImageRGB::new(h, w, data)
        })
        .collect::<Result<Vec<_>>>()?;
    MultiViewSet::from_vec(tiles)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(h: usize, w: usize, c: [f64; 3]) -> ImageRGB {
        ImageRGB::filled(h, w, c)
    }

    #[test]
    fn composite_doubles_each_side() {
        let v = MultiViewSet::new([
            solid(512, 512, [1.0, 0.0, 0.0]),
            solid(512, 512, [0.0, 1.0, 0.0]),
            solid(512, 512, [0.0, 0.0, 1.0]),
            solid(512, 512, [1.0, 1.0, 0.0]),
        ])
        .unwrap();
        let c = compose_four_panel(&v);
        assert_eq!(c.dims(), (1024, 1024));
        assert_eq!(c.pixel(0, 0), [1.0, 0.0, 0.0]);
        assert_eq!(c.pixel(0, 1023), [0.0, 1.0, 0.0]);
        assert_eq!(c.pixel(1023, 0), [0.0, 0.0, 1.0]);
        assert_eq!(c.pixel(1023, 1023), [1.0, 1.0, 0.0]);
    }

    #[test]
    fn identical_solid_views_give_solid_composite() {
        let c = [0.2, 0.4, 0.6];
        let v = MultiViewSet::new(std::array::from_fn(|_| solid(8, 8, c))).unwrap();
        assert_eq!(compose_four_panel(&v), solid(16, 16, c));
    }

    #[test]
    fn two_by_two_composite_splits_into_single_pixels() {
        let comp = ImageRGB::new(2, 2, vec![0.1, 0.1, 0.1, 0.2, 0.2, 0.2, 0.3, 0.3, 0.3, 0.4, 0.4, 0.4]).unwrap();
        let v = split_four_panel(&comp).unwrap();
        let firsts: Vec<f64> = v.views().iter().map(|im| im.pixel(0, 0)[0]).collect();
        assert_eq!(firsts, vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn non_square_composite_splits_into_half_tiles() {
        let comp = ImageRGB::filled(10, 24, [0.5, 0.5, 0.5]);
        let v = split_four_panel(&comp).unwrap();
        assert_eq!(v.dims(), (5, 12));
    }

    #[test]
    fn odd_composite_and_mismatched_views_rejected() {
        assert!(split_four_panel(&ImageRGB::filled(9, 8, [0.0; 3])).is_err());
        assert!(MultiViewSet::new([
            solid(8, 8, [0.0; 3]),
            solid(8, 8, [0.0; 3]),
            solid(8, 9, [0.0; 3]),
            solid(8, 8, [0.0; 3]),
        ])
        .is_err());
        assert!(MultiViewSet::from_vec(vec![solid(8, 8, [0.0; 3]); 3]).is_err());
    }
}
