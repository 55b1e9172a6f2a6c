//! Separable bilinear resampling (half-pixel centers, edge clamping) as a
//! linear operator, with its adjoint for back-propagation.

#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

fn axis_taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let frac = if i0 == i1 { 0.0 } else { src - i0 as f64 };
            Tap { i0, i1, w0: 1.0 - frac, w1: frac }
        })
        .collect()
}

/// Resizes `in_h x in_w x 3` interleaved buffers to `out_h x out_w x 3`.
#[derive(Clone, Debug)]
pub struct Resampler {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl Resampler {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        assert!(in_h > 0 && in_w > 0 && out_h > 0 && out_w > 0, "empty resample");
        Self {
            in_h,
            in_w,
            out_h,
            out_w,
            rows: axis_taps(in_h, out_h),
            cols: axis_taps(in_w, out_w),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.in_h == self.out_h && self.in_w == self.out_w
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.in_h * self.in_w * 3);
        if self.is_identity() {
            return input.to_vec();
        }
        let mut out = vec![0.0; self.out_h * self.out_w * 3];
        for (y, ry) in self.rows.iter().enumerate() {
            for (x, cx) in self.cols.iter().enumerate() {
                let o = (y * self.out_w + x) * 3;
                for (iy, wy) in [(ry.i0, ry.w0), (ry.i1, ry.w1)] {
                    for (ix, wx) in [(cx.i0, cx.w0), (cx.i1, cx.w1)] {
                        let w = wy * wx;
                        if w == 0.0 {
                            continue;
                        }
                        let s = (iy * self.in_w + ix) * 3;
                        for c in 0..3 {
                            out[o + c] += w * input[s + c];
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Resampler::forward`]: maps an output-space gradient back to input space.
    pub fn adjoint(&self, grad_out: &[f64]) -> Vec<f64> {
        assert_eq!(grad_out.len(), self.out_h * self.out_w * 3);
        if self.is_identity() {
            return grad_out.to_vec();
        }
        let mut grad_in = vec![0.0; self.in_h * self.in_w * 3];
        for (y, ry) in self.rows.iter().enumerate() {
            for (x, cx) in self.cols.iter().enumerate() {
                let o = (y * self.out_w + x) * 3;
                for (iy, wy) in [(ry.i0, ry.w0), (ry.i1, ry.w1)] {
                    for (ix, wx) in [(cx.i0, cx.w0), (cx.i1, cx.w1)] {
                        let w = wy * wx;
                        if w == 0.0 {
                            continue;
                        }
                        let s = (iy * self.in_w + ix) * 3;
                        for c in 0..3 {
                            grad_in[s + c] += w * grad_out[o + c];
                        }
                    }
                }
            }
        }
        grad_in
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn adjoint_satisfies_inner_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (ih, iw, oh, ow) in [(7, 5, 16, 16), (32, 32, 8, 8), (12, 20, 12, 20), (3, 9, 5, 2)] {
            let r = Resampler::new(ih, iw, oh, ow);
            let x: Vec<f64> = (0..ih * iw * 3).map(|_| rng.random::<f64>()).collect();
            let g: Vec<f64> = (0..oh * ow * 3).map(|_| rng.random::<f64>()).collect();
            let lhs: f64 = r.forward(&x).iter().zip(&g).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&r.adjoint(&g)).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn constants_are_preserved() {
        let r = Resampler::new(5, 7, 13, 4);
        let out = r.forward(&vec![0.3; 5 * 7 * 3]);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn same_size_is_exact_copy() {
        let x: Vec<f64> = (0..4 * 6 * 3).map(|i| i as f64 / 72.0).collect();
        assert_eq!(Resampler::new(4, 6, 4, 6).forward(&x), x);
    }
}
