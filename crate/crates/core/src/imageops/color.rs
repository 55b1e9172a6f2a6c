//! sRGB (D65) <-> CIE L*a*b* conversion.

use std::sync::LazyLock;

use super::ImageRGB;

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

/// Reference white as the image of RGB (1, 1, 1), so white maps to a* = b* = 0 exactly.
static WHITE: LazyLock<[f64; 3]> = LazyLock::new(|| {
    let row_sum = |r: &[f64; 3]| r.iter().sum::<f64>();
    [row_sum(&RGB_TO_XYZ[0]), row_sum(&RGB_TO_XYZ[1]), row_sum(&RGB_TO_XYZ[2])]
});

const DELTA: f64 = 6.0 / 29.0;

/// Per-channel value ranges for L*, a*, b*.
pub const LAB_RANGES: [(f64, f64); 3] = [(0.0, 100.0), (-128.0, 127.0), (-128.0, 127.0)];

/// Image in CIE L*a*b*, channels interleaved like [`ImageRGB`].
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl LabImage {
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Values of one channel (0 = L*, 1 = a*, 2 = b*).
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }
}

pub fn rgb_to_lab(image: &ImageRGB) -> LabImage {
    let data = image
        .data()
        .chunks_exact(3)
        .flat_map(|p| srgb_pixel_to_lab([p[0], p[1], p[2]]))
        .collect();
    LabImage { height: image.height(), width: image.width(), data }
}

/// Out-of-gamut results are clipped to `[0, 1]`.
pub fn lab_to_rgb(image: &LabImage) -> ImageRGB {
    let data = image
        .data
        .chunks_exact(3)
        .flat_map(|p| lab_pixel_to_srgb([p[0], p[1], p[2]]))
        .collect();
    ImageRGB::new(image.height, image.width, data).expect("clipped conversion yields valid pixels")
}

pub fn srgb_pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let xyz = mat_vec(&RGB_TO_XYZ, lin);
    let w = *WHITE;
    let f = [lab_f(xyz[0] / w[0]), lab_f(xyz[1] / w[1]), lab_f(xyz[2] / w[2])];
    [116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])]
}

pub fn lab_pixel_to_srgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let w = *WHITE;
    let xyz = [w[0] * lab_f_inv(fx), w[1] * lab_f_inv(fy), w[2] * lab_f_inv(fz)];
    let lin = mat_vec(&XYZ_TO_RGB, xyz);
    lin.map(|c| linear_to_srgb(c).clamp(0.0, 1.0))
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.max(0.0).powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    if f > DELTA {
        f * f * f
    } else {
        3.0 * DELTA * DELTA * (f - 4.0 / 29.0)
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    adj.map(|row| row.map(|v| v / det))
}
