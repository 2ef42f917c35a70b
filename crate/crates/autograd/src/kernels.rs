//! Plain numeric kernels shared by the forward and backward passes.

use crate::real::Real;

/// `C[m×n] = alpha · op(A) · op(B) + beta · C` on row-major slices.
///
/// `A` is stored as `m×k` (or `k×m` when `trans_a`), `B` as `k×n` (or `n×k`
/// when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<R: Real>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: R,
    a: &[R],
    b: &[R],
    beta: R,
    c: &mut [R],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths were checked above and the three slices cannot alias
    // because `c` is borrowed mutably.
    unsafe {
        R::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// Unfolds one `[C, H, W]` image into `[C·k·k, Ho·Wo]` columns.
pub fn im2col<R: Real>(g: &ConvGeometry, image: &[R], cols: &mut [R]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let spatial = ho * wo;
    debug_assert_eq!(cols.len(), g.patch_len() * spatial);
    for c in 0..g.channels {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * spatial..(row + 1) * spatial];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * wo + ox] = if iy >= 0
                            && ix >= 0
                            && (iy as usize) < g.height
                            && (ix as usize) < g.width
                        {
                            image[(c * g.height + iy as usize) * g.width + ix as usize]
                        } else {
                            R::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `image`.
pub fn col2im<R: Real>(g: &ConvGeometry, cols: &[R], image: &mut [R]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let spatial = ho * wo;
    for c in 0..g.channels {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * spatial..(row + 1) * spatial];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.height {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix as usize >= g.width {
                            continue;
                        }
                        image[(c * g.height + iy as usize) * g.width + ix as usize] +=
                            src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

/// Normalized 1-D Gaussian taps of length `2·radius + 1`.
pub fn gaussian_taps(radius: usize, sigma: f64) -> Vec<f64> {
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Window weight mass that falls inside an `h×w` frame at every pixel, for a
/// separable kernel with the given 1-D taps.
pub fn window_mass<R: Real>(taps: &[R], h: usize, w: usize) -> Vec<R> {
    let r = taps.len() / 2;
    let axis = |n: usize| -> Vec<R> {
        (0..n)
            .map(|i| {
                let mut s = R::zero();
                for (t, &tap) in taps.iter().enumerate() {
                    let j = i as isize + t as isize - r as isize;
                    if j >= 0 && (j as usize) < n {
                        s += tap;
                    }
                }
                s
            })
            .collect()
    };
    let (my, mx) = (axis(h), axis(w));
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(my[y] * mx[x]);
        }
    }
    out
}

/// Separable zero-padded "same" filtering of a stack of `h×w` planes.
///
/// Applies the taps along rows then columns. The operator is self-adjoint
/// for symmetric taps, which the backward pass relies on.
pub fn separable_filter<R: Real>(taps: &[R], planes: &[R], h: usize, w: usize, out: &mut [R]) {
    let r = taps.len() / 2;
    let mut tmp = vec![R::zero(); w];
    for (plane, dst) in planes.chunks_exact(h * w).zip(out.chunks_exact_mut(h * w)) {
        let mut horiz = vec![R::zero(); h * w];
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for (x, t) in tmp.iter_mut().enumerate() {
                let mut s = R::zero();
                for (k, &tap) in taps.iter().enumerate() {
                    let j = x as isize + k as isize - r as isize;
                    if j >= 0 && (j as usize) < w {
                        s += tap * row[j as usize];
                    }
                }
                *t = s;
            }
            horiz[y * w..(y + 1) * w].copy_from_slice(&tmp);
        }
        for y in 0..h {
            for x in 0..w {
                let mut s = R::zero();
                for (k, &tap) in taps.iter().enumerate() {
                    let j = y as isize + k as isize - r as isize;
                    if j >= 0 && (j as usize) < h {
                        s += tap * horiz[j as usize * w + x];
                    }
                }
                dst[y * w + x] = s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; a.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_for_all_transpose_flags() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let expect = naive_matmul(&a, &b, m, k, n);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let aa = if ta { transpose(&a, m, k) } else { a.clone() };
            let bb = if tb { transpose(&b, k, n) } else { b.clone() };
            let mut c = vec![0.0; m * n];
            gemm(ta, tb, m, n, k, 1.0, &aa, &bb, 0.0, &mut c);
            for (x, y) in c.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeometry { channels: 2, height: 5, width: 4, kernel: 3, stride: 2, pad: 1 };
        let x: Vec<f64> = (0..2 * 5 * 4).map(|i| (i as f64 * 0.7).sin()).collect();
        let cols_len = g.patch_len() * g.out_height() * g.out_width();
        let y: Vec<f64> = (0..cols_len).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut cols = vec![0.0; cols_len];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gaussian_taps_sum_to_one() {
        let taps = gaussian_taps(5, 1.5);
        assert_eq!(taps.len(), 11);
        assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((taps[0] - taps[10]).abs() < 1e-18);
    }

    #[test]
    fn filtering_constant_plane_equals_window_mass() {
        let taps = gaussian_taps(5, 1.5);
        let (h, w) = (6, 7);
        let mass = window_mass(&taps, h, w);
        let mut out = vec![0.0; h * w];
        separable_filter(&taps, &vec![1.0; h * w], h, w, &mut out);
        for (a, b) in out.iter().zip(&mass) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
