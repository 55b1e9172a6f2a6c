//! Per-channel Lab histogram matching by monotone quantile mapping.
//!
//! Each channel is histogrammed into [`BINS`] equal bins over its fixed Lab
//! range. The empirical CDF is piecewise linear between bin edges, so both
//! the forward CDF and its inverse are continuous and exactly invertible on
//! occupied bins.

use super::color::{lab_to_rgb, rgb_to_lab, LabImage, LAB_RANGES};
use super::ImageRGB;
use crate::error::{Error, Result};

pub const BINS: usize = 256;

/// Bin width of each Lab channel.
pub fn bin_width(channel: usize) -> f64 {
    let (lo, hi) = LAB_RANGES[channel];
    (hi - lo) / BINS as f64
}

/// Remaps `source` so each Lab channel follows the reference distribution.
pub fn histogram_match_lab(source: &ImageRGB, reference: &ImageRGB) -> Result<ImageRGB> {
    let src = rgb_to_lab(source);
    let refr = rgb_to_lab(reference);
    Ok(lab_to_rgb(&match_lab(&src, &refr)?))
}

pub fn match_lab(source: &LabImage, reference: &LabImage) -> Result<LabImage> {
    if source.data.is_empty() || reference.data.is_empty() {
        return Err(Error::invalid("histogram matching needs non-empty images"));
    }
    let mut out = source.data.clone();
    for c in 0..3 {
        let src = source.channel(c);
        let refr = reference.channel(c);
        let mapped = match_channel(&src, &refr, LAB_RANGES[c]);
        for (i, v) in mapped.into_iter().enumerate() {
            out[i * 3 + c] = v;
        }
    }
    Ok(LabImage { height: source.height, width: source.width, data: out })
}

/// Maps every source value through `CDF_ref^-1(CDF_src(v))`.
pub fn match_channel(source: &[f64], reference: &[f64], range: (f64, f64)) -> Vec<f64> {
    let (rmin, rmax) = min_max(reference);
    if rmax - rmin <= 0.0 {
        // Degenerate reference CDF: everything maps to the constant.
        return vec![rmin; source.len()];
    }
    let src = Cdf::new(source, range);
    let refr = Cdf::new(reference, range);
    source.iter().map(|v| refr.inverse(src.eval(*v))).collect()
}

struct Cdf {
    lo: f64,
    width: f64,
    /// Probability mass per bin.
    mass: Vec<f64>,
    /// `edges[k]` = CDF at the left edge of bin `k`; `edges[BINS]` = 1.
    edges: Vec<f64>,
}

impl Cdf {
    fn new(values: &[f64], (lo, hi): (f64, f64)) -> Self {
        let width = (hi - lo) / BINS as f64;
        let mut counts = vec![0usize; BINS];
        for v in values {
            counts[Self::bin_of(*v, lo, width)] += 1;
        }
        let n = values.len() as f64;
        let mass: Vec<f64> = counts.iter().map(|c| *c as f64 / n).collect();
        let mut edges = Vec::with_capacity(BINS + 1);
        let mut acc = 0usize;
        edges.push(0.0);
        for c in &counts {
            acc += c;
            edges.push(acc as f64 / n);
        }
        Self { lo, width, mass, edges }
    }

    fn bin_of(v: f64, lo: f64, width: f64) -> usize {
        (((v - lo) / width).floor().max(0.0) as usize).min(BINS - 1)
    }

    fn eval(&self, v: f64) -> f64 {
        let k = Self::bin_of(v, self.lo, self.width);
        let frac = ((v - (self.lo + k as f64 * self.width)) / self.width).clamp(0.0, 1.0);
        self.edges[k] + frac * self.mass[k]
    }

    /// Smallest occupied bin whose right CDF edge exceeds `q`; `q = 1` maps
    /// to the right edge of the last occupied bin.
    fn inverse(&self, q: f64) -> f64 {
        let k = (0..BINS)
            .find(|&k| self.mass[k] > 0.0 && self.edges[k + 1] > q)
            .or_else(|| (0..BINS).rev().find(|&k| self.mass[k] > 0.0))
            .expect("non-empty histogram");
        let frac = ((q - self.edges[k]) / self.mass[k]).clamp(0.0, 1.0);
        self.lo + (k as f64 + frac) * self.width
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
}

/// Wasserstein-1 distance between two 1-D empirical distributions,
/// `integral |F_a(x) - F_b(x)| dx`.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "empty sample");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.min(*y),
            (Some(x), None) => *x,
            (None, Some(y)) => *y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    total
}

/// Per-channel Lab Wasserstein-1 distances between two images.
pub fn lab_wasserstein(a: &ImageRGB, b: &ImageRGB) -> [f64; 3] {
    let la = rgb_to_lab(a);
    let lb = rgb_to_lab(b);
    std::array::from_fn(|c| wasserstein1(&la.channel(c), &lb.channel(c)))
}
