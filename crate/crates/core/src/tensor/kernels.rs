//! Dense kernels shared by the graph operators: GEMM and the im2col/col2im
//! pair used by both convolution directions.

/// `C = alpha * op(A) * op(B) + beta * C` with `op(A)` of shape `[m, k]` and
/// `op(B)` of shape `[k, n]`, all row-major. When `a_t` is set, `A` is stored
/// as `[k, m]`; likewise `B` as `[n, k]` when `b_t` is set.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.fill(0.0);
        } else {
            c.iter_mut().for_each(|x| *x *= beta);
        }
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slice lengths were checked above against the logical
    // shapes, and the strides address exactly those elements.
    unsafe {
        matrixmultiply::dgemm(
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

/// Geometry of a 2-D convolution window over a `[channels, height, width]`
/// plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Length of one im2col row: `channels * kernel * kernel`.
    pub fn patch(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn plane(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Unfolds `batch` planes into a `[batch * positions, patch]` matrix. Row
/// order is `(n, oy, ox)`, column order `(c, ky, kx)`.
pub fn im2col(input: &[f64], batch: usize, g: &ConvGeom, cols: &mut [f64]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let patch = g.patch();
    debug_assert_eq!(input.len(), batch * g.plane());
    debug_assert_eq!(cols.len(), batch * oh * ow * patch);
    let k = g.kernel;
    for n in 0..batch {
        let plane = &input[n * g.plane()..(n + 1) * g.plane()];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((n * oh + oy) * ow + ox) * patch;
                let dst = &mut cols[row..row + patch];
                let mut idx = 0;
                for c in 0..g.channels {
                    let chan = &plane[c * g.height * g.width..(c + 1) * g.height * g.width];
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            dst[idx..idx + k].fill(0.0);
                            idx += k;
                            continue;
                        }
                        let line = &chan[iy as usize * g.width..(iy as usize + 1) * g.width];
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            dst[idx] = if ix < 0 || ix >= g.width as isize {
                                0.0
                            } else {
                                line[ix as usize]
                            };
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into planes.
pub fn col2im(cols: &[f64], batch: usize, g: &ConvGeom, out: &mut [f64]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let patch = g.patch();
    debug_assert_eq!(out.len(), batch * g.plane());
    debug_assert_eq!(cols.len(), batch * oh * ow * patch);
    let k = g.kernel;
    let plane_len = g.plane();
    for n in 0..batch {
        let plane = &mut out[n * plane_len..(n + 1) * plane_len];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((n * oh + oy) * ow + ox) * patch;
                let src = &cols[row..row + patch];
                let mut idx = 0;
                for c in 0..g.channels {
                    let base = c * g.height * g.width;
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            idx += k;
                            continue;
                        }
                        let line = base + iy as usize * g.width;
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.width as isize {
                                plane[line + ix as usize] += src[idx];
                            }
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
}

/// `[batch, channels, positions]` -> `[batch * positions, channels]`.
pub fn nchw_to_rows(x: &[f64], batch: usize, channels: usize, positions: usize, out: &mut [f64]) {
    for n in 0..batch {
        for c in 0..channels {
            let src = &x[(n * channels + c) * positions..(n * channels + c + 1) * positions];
            for (p, v) in src.iter().enumerate() {
                out[(n * positions + p) * channels + c] = *v;
            }
        }
    }
}

/// `[batch * positions, channels]` -> `[batch, channels, positions]`.
pub fn rows_to_nchw(x: &[f64], batch: usize, channels: usize, positions: usize, out: &mut [f64]) {
    for n in 0..batch {
        for p in 0..positions {
            let src = &x[(n * positions + p) * channels..(n * positions + p + 1) * channels];
            for (c, v) in src.iter().enumerate() {
                out[(n * channels + c) * positions + p] = *v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
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

    fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; x.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = x[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_in_all_transpose_modes() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(&a, m, k);
        let bt = transpose(&b, k, n);
        for (aa, ta) in [(&a, false), (&at, true)] {
            for (bb, tb) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, 1.0, aa, ta, bb, tb, 0.0, &mut c);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom {
            channels: 2,
            height: 5,
            width: 4,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let batch = 2;
        let x: Vec<f64> = (0..batch * g.plane()).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..batch * g.positions() * g.patch())
            .map(|i| (i as f64 * 1.3).cos())
            .collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, batch, &g, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&y, batch, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
