//! Dense kernels shared by the tape ops: GEMM, im2col/col2im, separable blur.

/// `C (m×n) = op(A)·op(B) + beta·C`, all row-major.
///
/// `A` is logically `m×k`; when `trans_a` it is stored as `k×m`.
/// `B` is logically `k×n`; when `trans_b` it is stored as `n×k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserted buffer lengths cover every index reachable through
    // the (m, k, n) extents and the strides chosen above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    pub fn new(c_in: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        ConvGeometry {
            c_in,
            h,
            w,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        }
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_len(&self) -> usize {
        self.h_out * self.w_out
    }

    /// A 1×1 stride-1 unpadded conv reads the input directly as its column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfold `input` (`C×H×W`) into a `(C·k·k) × (H'·W')` column matrix.
pub(crate) fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let n = g.out_len();
    let mut cols = vec![0.0; g.patch_len() * n];
    for ci in 0..g.c_in {
        let plane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * n;
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst = &mut cols[row + oy * g.w_out..row + (oy + 1) * g.w_out];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: fold column gradients back onto the input grid.
pub(crate) fn col2im_add(cols: &[f64], g: &ConvGeometry, out: &mut [f64]) {
    let n = g.out_len();
    for ci in 0..g.c_in {
        let plane = &mut out[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * n;
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src = &cols[row + oy * g.w_out..row + (oy + 1) * g.w_out];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

/// Normalized 1-D Gaussian window of odd length.
pub(crate) fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" blur of every `H×W` plane: output is `(H−k+1)×(W−k+1)`.
pub(crate) fn blur_valid(input: &[f64], c: usize, h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let mut tmp = vec![0.0; h * wo];
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            for x in 0..wo {
                tmp[y * wo + x] = kernel.iter().zip(&src[x..x + k]).map(|(a, b)| a * b).sum();
            }
        }
        let dst = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for y in 0..ho {
            let row = &mut dst[y * wo..(y + 1) * wo];
            for (t, &kv) in kernel.iter().enumerate() {
                let src = &tmp[(y + t) * wo..(y + t + 1) * wo];
                for (d, s) in row.iter_mut().zip(src) {
                    *d += kv * s;
                }
            }
        }
    }
    out
}

/// Adjoint of [`blur_valid`], accumulated into `grad_in` (`C×H×W`).
pub(crate) fn blur_valid_adjoint_add(
    grad_out: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    grad_in: &mut [f64],
) {
    let k = kernel.len();
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let mut tmp = vec![0.0; h * wo];
    for ch in 0..c {
        tmp.iter_mut().for_each(|v| *v = 0.0);
        let g = &grad_out[ch * ho * wo..(ch + 1) * ho * wo];
        for y in 0..ho {
            let src = &g[y * wo..(y + 1) * wo];
            for (t, &kv) in kernel.iter().enumerate() {
                let dst = &mut tmp[(y + t) * wo..(y + t + 1) * wo];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += kv * s;
                }
            }
        }
        let plane = &mut grad_in[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let dst = &mut plane[y * w..(y + 1) * w];
            for x in 0..wo {
                let s = tmp[y * wo + x];
                for (d, &kv) in dst[x..x + k].iter_mut().zip(kernel) {
                    *d += kv * s;
                }
            }
        }
    }
}
