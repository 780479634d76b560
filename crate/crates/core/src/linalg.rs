//! Matrix kernels behind convolution and dense layers.
//!
//! All three product forms accumulate into `c` so callers can fold several
//! contributions into one buffer. Inner loops run over contiguous slices to
//! keep the single-core pipeline autovectorizable.

use crate::scalar::Scalar;

/// C[m x n] += A[m x k] * B[k x n]
pub fn matmul_acc<F: Scalar>(c: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == F::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_ip * b_v;
            }
        }
    }
}

/// C[m x n] += A[m x k] * B[n x k]^T
pub fn matmul_abt_acc<F: Scalar>(c: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, c_v) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *c_v += acc;
        }
    }
}

/// C[m x n] += A[k x m]^T * B[k x n]
pub fn matmul_atb_acc<F: Scalar>(c: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == F::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_pi * b_v;
            }
        }
    }
}

/// Output spatial size of a conv/pool dimension.
pub fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - kernel) / stride + 1
}

/// Unfold one image `[c x h x w]` into columns `[(c*kh*kw) x (oh*ow)]`.
/// Padding positions contribute zeros.
#[allow(clippy::too_many_arguments)]
pub fn im2col<F: Scalar>(
    col: &mut [F],
    img: &[F],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) {
    let oh = conv_out(h, kernel, stride, padding);
    let ow = conv_out(w, kernel, stride, padding);
    debug_assert_eq!(col.len(), c * kernel * kernel * oh * ow);
    debug_assert_eq!(img.len(), c * h * w);
    let mut row = 0usize;
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let out_row = &mut col[row * oh * ow..(row + 1) * oh * ow];
                row += 1;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    let dst = &mut out_row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        for v in dst.iter_mut() {
                            *v = F::zero();
                        }
                        continue;
                    }
                    let src_base = iy as usize * w;
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            F::zero()
                        } else {
                            plane[src_base + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold column gradients back onto an image gradient, accumulating overlaps.
/// Inverse-adjoint of [`im2col`].
#[allow(clippy::too_many_arguments)]
pub fn col2im_acc<F: Scalar>(
    img: &mut [F],
    col: &[F],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) {
    let oh = conv_out(h, kernel, stride, padding);
    let ow = conv_out(w, kernel, stride, padding);
    debug_assert_eq!(col.len(), c * kernel * kernel * oh * ow);
    debug_assert_eq!(img.len(), c * h * w);
    let mut row = 0usize;
    for ch in 0..c {
        let plane = &mut img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let src_row = &col[row * oh * ow..(row + 1) * oh * ow];
                row += 1;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_base = iy as usize * w;
                    let src = &src_row[oy * ow..(oy + 1) * ow];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[src_base + ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
