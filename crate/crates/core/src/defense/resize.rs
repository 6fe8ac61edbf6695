//! Bilinear resize with half-pixel centers and edge clamping.
//!
//! Source coordinate for destination index `i` is `(i + 0.5)·(in/out) − 0.5`,
//! clamped to `[0, in−1]`. A [`ResizePlan`] precomputes the taps so the
//! forward pass and its adjoint share exactly the same weights.

use crate::scalar::Scalar;
use crate::video::CHANNELS;

#[derive(Debug, Clone)]
struct Taps<T> {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<T>,
}

fn axis_taps<T: Scalar>(input: usize, output: usize) -> Taps<T> {
    let scale = input as f64 / output as f64;
    let mut taps = Taps {
        lo: Vec::with_capacity(output),
        hi: Vec::with_capacity(output),
        frac: Vec::with_capacity(output),
    };
    for i in 0..output {
        let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
        let lo = src.floor() as usize;
        taps.lo.push(lo);
        taps.hi.push((lo + 1).min(input - 1));
        taps.frac.push(T::lit(src - lo as f64));
    }
    taps
}

/// Nearest source index for each destination index along one axis.
pub fn nearest_source(input: usize, output: usize) -> Vec<usize> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            src.round() as usize
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ResizePlan<T> {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    rows: Taps<T>,
    cols: Taps<T>,
}

impl<T: Scalar> ResizePlan<T> {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        assert!(in_h > 0 && in_w > 0 && out_h > 0 && out_w > 0, "resize dims must be positive");
        Self {
            in_h,
            in_w,
            out_h,
            out_w,
            rows: axis_taps(in_h, out_h),
            cols: axis_taps(in_w, out_w),
        }
    }

    /// Resizes one interleaved RGB frame, appending to `out`.
    pub fn forward_into(&self, src: &[T], out: &mut Vec<T>) {
        debug_assert_eq!(src.len(), self.in_h * self.in_w * CHANNELS);
        let one = T::one();
        for oy in 0..self.out_h {
            let (y0, y1, fy) = (self.rows.lo[oy], self.rows.hi[oy], self.rows.frac[oy]);
            for ox in 0..self.out_w {
                let (x0, x1, fx) = (self.cols.lo[ox], self.cols.hi[ox], self.cols.frac[ox]);
                for c in 0..CHANNELS {
                    let p = |y: usize, x: usize| src[(y * self.in_w + x) * CHANNELS + c];
                    let top = p(y0, x0) * (one - fx) + p(y0, x1) * fx;
                    let bottom = p(y1, x0) * (one - fx) + p(y1, x1) * fx;
                    out.push(top * (one - fy) + bottom * fy);
                }
            }
        }
    }

    pub fn forward(&self, src: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.out_h * self.out_w * CHANNELS);
        self.forward_into(src, &mut out);
        out
    }

    /// Adjoint of [`forward`](Self::forward): accumulates `dout` into `dsrc`.
    pub fn backward_accumulate(&self, dout: &[T], dsrc: &mut [T]) {
        let one = T::one();
        for oy in 0..self.out_h {
            let (y0, y1, fy) = (self.rows.lo[oy], self.rows.hi[oy], self.rows.frac[oy]);
            for ox in 0..self.out_w {
                let (x0, x1, fx) = (self.cols.lo[ox], self.cols.hi[ox], self.cols.frac[ox]);
                for c in 0..CHANNELS {
                    let g = dout[(oy * self.out_w + ox) * CHANNELS + c];
                    if g == T::zero() {
                        continue;
                    }
                    let mut add = |y: usize, x: usize, w: T| dsrc[(y * self.in_w + x) * CHANNELS + c] += g * w;
                    add(y0, x0, (one - fy) * (one - fx));
                    add(y0, x1, (one - fy) * fx);
                    add(y1, x0, fy * (one - fx));
                    add(y1, x1, fy * fx);
                }
            }
        }
    }
}

/// One-shot resize of an interleaved RGB frame.
pub fn resize_bilinear<T: Scalar>(frame: &[T], height: usize, width: usize, out_h: usize, out_w: usize) -> Vec<T> {
    ResizePlan::new(height, width, out_h, out_w).forward(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn random_frame(h: usize, w: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        (0..h * w * 3).map(|_| rng.random_range(0.0..255.0)).collect()
    }

    // Independent per-pixel evaluation of the half-pixel convention.
    fn oracle(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
        let mut out = vec![0.0; oh * ow * 3];
        for oy in 0..oh {
            for ox in 0..ow {
                let sy = ((oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5).max(0.0).min((h - 1) as f64);
                let sx = ((ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5).max(0.0).min((w - 1) as f64);
                for c in 0..3 {
                    let mut acc = 0.0;
                    for y in 0..h {
                        for x in 0..w {
                            let wy = (1.0 - (sy - y as f64).abs()).max(0.0);
                            let wx = (1.0 - (sx - x as f64).abs()).max(0.0);
                            acc += wy * wx * src[(y * w + x) * 3 + c];
                        }
                    }
                    out[(oy * ow + ox) * 3 + c] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn same_size_is_identity() {
        let f = random_frame(9, 13, 1);
        assert_eq!(resize_bilinear(&f, 9, 13, 9, 13), f);
    }

    #[test]
    fn constant_stays_constant() {
        let f = vec![77.0f64; 5 * 7 * 3];
        for (oh, ow) in [(1, 1), (3, 11), (20, 2), (56, 56)] {
            assert!(resize_bilinear(&f, 5, 7, oh, ow).iter().all(|&v| (v - 77.0).abs() < 1e-12));
        }
    }

    #[test]
    fn two_by_two_to_one() {
        let f: Vec<f64> = [0.0, 255.0, 255.0, 0.0].iter().flat_map(|&v| [v; 3]).collect();
        let out = resize_bilinear(&f, 2, 2, 1, 1);
        assert_eq!(out, vec![127.5; 3]);
        assert_eq!(oracle(&f, 2, 2, 1, 1), vec![127.5; 3]);
    }

    #[test]
    fn matches_oracle() {
        for (h, w, oh, ow, seed) in [(8, 8, 5, 3, 1), (4, 6, 9, 13, 2), (16, 16, 7, 7, 3), (3, 1, 2, 5, 4)] {
            let f = random_frame(h, w, seed);
            let fast = resize_bilinear(&f, h, w, oh, ow);
            let slow = oracle(&f, h, w, oh, ow);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_is_adjoint() {
        // <R x, y> == <x, Rᵀ y>
        let (h, w, oh, ow) = (7, 5, 4, 9);
        let plan = ResizePlan::<f64>::new(h, w, oh, ow);
        let x = random_frame(h, w, 11);
        let y = random_frame(oh, ow, 12);
        let rx = plan.forward(&x);
        let mut rty = vec![0.0; x.len()];
        plan.backward_accumulate(&y, &mut rty);
        let lhs: f64 = rx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&rty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-6 * lhs.abs());
    }

    #[test]
    fn nearest_source_identity() {
        assert_eq!(nearest_source(5, 5), vec![0, 1, 2, 3, 4]);
        assert_eq!(nearest_source(4, 2), vec![1, 3]);
    }
}
