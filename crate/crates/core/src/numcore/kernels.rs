//! Raw loops behind the differentiable operators.
//!
//! All reductions run in a fixed order so results are bit-reproducible.

/// Geometry of a sliding-window operation over one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds an image `[C, H, W]` into `[C*kh*kw, out_h*out_w]`.
pub(crate) fn im2col(img: &[f64], g: &Window, cols: &mut [f64]) {
    let ncols = g.cols();
    debug_assert_eq!(cols.len(), g.rows() * ncols);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (lo, hi) = valid_range(kj, g.pad_left, g.stride, g.width, g.out_w);
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    let Some(iy) = source_index(oy, ki, g.pad_top, g.stride, g.height) else {
                        line.fill(0.0);
                        continue;
                    };
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    let first = lo * g.stride + kj - g.pad_left;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (v, s) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *v = *s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into an image.
pub(crate) fn col2im_add(cols: &[f64], g: &Window, img: &mut [f64]) {
    let ncols = g.cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (lo, hi) = valid_range(kj, g.pad_left, g.stride, g.width, g.out_w);
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let Some(iy) = source_index(oy, ki, g.pad_top, g.stride, g.height) else {
                        continue;
                    };
                    if lo >= hi {
                        continue;
                    }
                    let line = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                    let first = lo * g.stride + kj - g.pad_left;
                    let dst = &mut plane[iy * g.width + first..(iy + 1) * g.width];
                    for (d, v) in dst.iter_mut().step_by(g.stride).zip(line) {
                        *d += v;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Input row for output row `o` at kernel offset `k`, if inside the image.
#[inline]
fn source_index(o: usize, k: usize, pad: usize, stride: usize, len: usize) -> Option<usize> {
    (o * stride + k).checked_sub(pad).filter(|&i| i < len)
}

/// Output columns `lo..hi` whose input column at kernel offset `k` lies
/// inside the image.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).div_ceil(stride).min(out);
    let hi = if len + pad > k { ((len + pad - k - 1) / stride + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc(m, k, n, a, [k, 1], b, [n, 1], c);
}

/// `c[m×k] += a[m×n] · b[k×n]ᵀ`.
pub(crate) fn matmul_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    gemm_acc(m, n, k, a, [n, 1], b, [1, n], c);
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`.
pub(crate) fn matmul_at_acc(a: &[f64], b: &[f64], c: &mut [f64], k: usize, m: usize, n: usize) {
    gemm_acc(m, k, n, a, [1, m], b, [n, 1], c);
}

/// `c[m×n] += A · B` with `A` (`m×k`) and `B` (`k×n`) given by
/// `[row stride, column stride]`.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], sa: [usize; 2], b: &[f64], sb: [usize; 2], c: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * sa[0] + (k - 1) * sa[1], "gemm: lhs too short");
    assert!(b.len() > (k - 1) * sb[0] + (n - 1) * sb[1], "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    // SAFETY: the asserts above keep every strided access in bounds, and
    // `c` cannot alias `a` or `b` (it is borrowed mutably).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa[0] as isize,
            sa[1] as isize,
            b.as_ptr(),
            sb[0] as isize,
            sb[1] as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
