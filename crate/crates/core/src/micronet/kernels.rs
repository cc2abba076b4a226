//! Convolution and pooling kernels restricted to rectangular output regions.
//!
//! Every output element is accumulated in the same order (bias, then input
//! channel, kernel row, kernel column) whether the region is the full map or a
//! sub-rectangle, so a partial recompute is bit-identical to a full pass.
//! Convolutions go through an im2col buffer so the inner loops run over long
//! contiguous spans even on the small deep maps.

use super::Scalar;

/// Half-open rectangle `[y0, y1) × [x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Rect {
    pub fn full(side: usize) -> Self {
        Rect {
            y0: 0,
            y1: side,
            x0: 0,
            x1: side,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.y0 >= self.y1 || self.x0 >= self.x1
    }

    /// Grow by `r` on every side, clipped to `[0, side)`.
    pub fn dilate(&self, r: usize, side: usize) -> Self {
        Rect {
            y0: self.y0.saturating_sub(r),
            y1: (self.y1 + r).min(side),
            x0: self.x0.saturating_sub(r),
            x1: (self.x1 + r).min(side),
        }
    }

    /// The region of a 2×2/stride-2 pooled map that reads from `self`.
    pub fn pooled(&self, pooled_side: usize) -> Self {
        Rect {
            y0: self.y0 / 2,
            y1: self.y1.div_ceil(2).min(pooled_side),
            x0: self.x0 / 2,
            x1: self.x1.div_ceil(2).min(pooled_side),
        }
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y1 && x >= self.x0 && x < self.x1
    }
}

/// Copy the `rect` part of `src` (channels × side²) into the interior of a
/// zero-bordered `dst` (channels × (side+2)²).
pub fn pad_region<T: Scalar>(src: &[T], channels: usize, side: usize, dst: &mut [T], rect: Rect) {
    let ps = side + 2;
    for c in 0..channels {
        for y in rect.y0..rect.y1 {
            let s = c * side * side + y * side;
            let d = c * ps * ps + (y + 1) * ps + 1;
            dst[d + rect.x0..d + rect.x1].copy_from_slice(&src[s + rect.x0..s + rect.x1]);
        }
    }
}

/// Gather the 3×3 neighbourhoods of every output position in `rect` into a
/// `(in_ch·9) × n` matrix, `n = rect area`, rows ordered (ic, ky, kx).
pub fn im2col<T: Scalar>(padded: &[T], in_ch: usize, side: usize, rect: Rect, cols: &mut Vec<T>) {
    let ps = side + 2;
    let w = rect.x1 - rect.x0;
    let n = (rect.y1 - rect.y0) * w;
    cols.clear();
    cols.resize(in_ch * 9 * n, T::zero());
    for ic in 0..in_ch {
        let src = &padded[ic * ps * ps..(ic + 1) * ps * ps];
        for k in 0..9 {
            let (ky, kx) = (k / 3, k % 3);
            let row = &mut cols[(ic * 9 + k) * n..(ic * 9 + k + 1) * n];
            for (ri, y) in (rect.y0..rect.y1).enumerate() {
                let s0 = (y + ky) * ps + rect.x0 + kx;
                row[ri * w..(ri + 1) * w].copy_from_slice(&src[s0..s0 + w]);
            }
        }
    }
}

/// 3×3 convolution (padding 1) followed by ReLU, written into `out` over `rect`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_relu<T: Scalar>(
    padded: &[T],
    in_ch: usize,
    side: usize,
    weight: &[T],
    bias: &[T],
    out_ch: usize,
    out: &mut [T],
    rect: Rect,
) {
    let w = rect.x1 - rect.x0;
    let n = (rect.y1 - rect.y0) * w;
    let kdim = in_ch * 9;
    let mut cols = Vec::new();
    im2col(padded, in_ch, side, rect, &mut cols);
    let mut acc = vec![T::zero(); n];
    for oc in 0..out_ch {
        acc.fill(bias[oc]);
        for (k, &wv) in weight[oc * kdim..(oc + 1) * kdim].iter().enumerate() {
            axpy(&mut acc, wv, &cols[k * n..(k + 1) * n]);
        }
        let plane = &mut out[oc * side * side..(oc + 1) * side * side];
        for (ri, y) in (rect.y0..rect.y1).enumerate() {
            let dst = &mut plane[y * side + rect.x0..y * side + rect.x1];
            for (d, &a) in dst.iter_mut().zip(&acc[ri * w..(ri + 1) * w]) {
                *d = if a > T::zero() { a } else { T::zero() };
            }
        }
    }
}

#[inline]
pub fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// Dot product with eight interleaved partial sums combined in a fixed
/// order, so the result is deterministic and the loop vectorises.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// 2×2 stride-2 max pool over the pooled-coordinate region `rect`.
pub fn maxpool2<T: Scalar>(act: &[T], channels: usize, side: usize, pooled: &mut [T], rect: Rect) {
    let ps = side / 2;
    for c in 0..channels {
        let a = &act[c * side * side..(c + 1) * side * side];
        let p = &mut pooled[c * ps * ps..(c + 1) * ps * ps];
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                let i = 2 * y * side + 2 * x;
                let m = a[i].max(a[i + 1]).max(a[i + side].max(a[i + side + 1]));
                p[y * ps + x] = m;
            }
        }
    }
}

/// Index (within the 2×2 window starting at `i`) of the first maximum in scan order.
#[inline]
pub fn pool_argmax<T: Scalar>(a: &[T], i: usize, side: usize) -> usize {
    let cands = [i, i + 1, i + side, i + side + 1];
    let mut best = cands[0];
    for &c in &cands[1..] {
        if a[c] > a[best] {
            best = c;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_recompute_is_bit_identical() {
        let side = 6;
        let (ic, oc) = (2, 3);
        let src: Vec<f32> = (0..ic * side * side).map(|i| ((i * 37 % 11) as f32 - 5.0) * 0.13).collect();
        let weight: Vec<f32> = (0..oc * ic * 9).map(|i| ((i * 17 % 7) as f32 - 3.0) * 0.21).collect();
        let bias = vec![0.1f32, -0.2, 0.05];
        let mut padded = vec![0.0f32; ic * (side + 2) * (side + 2)];
        pad_region(&src, ic, side, &mut padded, Rect::full(side));
        let mut full = vec![0.0f32; oc * side * side];
        conv3x3_relu(&padded, ic, side, &weight, &bias, oc, &mut full, Rect::full(side));

        let mut part = vec![f32::NAN; oc * side * side];
        let r = Rect { y0: 1, y1: 4, x0: 2, x1: 6 };
        conv3x3_relu(&padded, ic, side, &weight, &bias, oc, &mut part, r);
        for c in 0..oc {
            for y in 0..side {
                for x in 0..side {
                    let i = c * side * side + y * side + x;
                    if r.contains(y, x) {
                        assert_eq!(part[i].to_bits(), full[i].to_bits());
                    } else {
                        assert!(part[i].is_nan());
                    }
                }
            }
        }
    }

    #[test]
    fn pooled_rect_covers_reads() {
        let r = Rect { y0: 3, y1: 8, x0: 0, x1: 1 };
        assert_eq!(r.pooled(16), Rect { y0: 1, y1: 4, x0: 0, x1: 1 });
        assert_eq!(r.dilate(1, 8), Rect { y0: 2, y1: 8, x0: 0, x1: 2 });
    }
}
