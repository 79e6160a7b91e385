//! Circular-padded 2-D convolution kernels (im2col + GEMM) and the other
//! dense feature-map primitives used by the tape.

/// `C (m x n) = beta * C + A (m x k) * B (k x n)`, with optional transposes of
/// the row-major operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserted lengths cover every index reachable through the
    // given dimensions and strides.
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        self.height / self.stride
    }

    pub fn out_width(&self) -> usize {
        self.width / self.stride
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Source column for each (tap column, output column) pair, wrapped.
    fn column_table(&self) -> Vec<usize> {
        let r = (self.kernel / 2) as isize;
        let w = self.width as isize;
        let mut table = Vec::with_capacity(self.kernel * self.out_width());
        for dx in -r..=r {
            for ox in 0..self.out_width() {
                table.push((ox as isize * self.stride as isize + dx).rem_euclid(w) as usize);
            }
        }
        table
    }

    fn row_table(&self) -> Vec<usize> {
        let r = (self.kernel / 2) as isize;
        let h = self.height as isize;
        let mut table = Vec::with_capacity(self.kernel * self.out_height());
        for dy in -r..=r {
            for oy in 0..self.out_height() {
                table.push((oy as isize * self.stride as isize + dy).rem_euclid(h) as usize);
            }
        }
        table
    }
}

/// Unfolds `input` (`[c, h, w]`) into a `patch_len x out_pixels` matrix.
/// Output pixel `(oy, ox)` is centered on input `(oy * stride, ox * stride)`.
pub(crate) fn im2col(geo: &ConvGeometry, input: &[f64]) -> Vec<f64> {
    let (oh, ow) = (geo.out_height(), geo.out_width());
    let p = oh * ow;
    let k = geo.kernel;
    let rows = geo.row_table();
    let cols = geo.column_table();
    let plane = geo.height * geo.width;
    let mut out = vec![0.0; geo.patch_len() * p];
    for c in 0..geo.in_channels {
        let src = &input[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut out[row * p..(row + 1) * p];
                let ctab = &cols[kx * ow..(kx + 1) * ow];
                for oy in 0..oh {
                    let iy = rows[ky * oh + oy];
                    let src_row = &src[iy * geo.width..(iy + 1) * geo.width];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (d, &ix) in dst_row.iter_mut().zip(ctab) {
                        *d = src_row[ix];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im(geo: &ConvGeometry, cols_grad: &[f64], input_grad: &mut [f64]) {
    let (oh, ow) = (geo.out_height(), geo.out_width());
    let p = oh * ow;
    let k = geo.kernel;
    let rows = geo.row_table();
    let cols = geo.column_table();
    let plane = geo.height * geo.width;
    for c in 0..geo.in_channels {
        let dst = &mut input_grad[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols_grad[row * p..(row + 1) * p];
                let ctab = &cols[kx * ow..(kx + 1) * ow];
                for oy in 0..oh {
                    let iy = rows[ky * oh + oy];
                    let dst_row = &mut dst[iy * geo.width..(iy + 1) * geo.width];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    for (&g, &ix) in src_row.iter().zip(ctab) {
                        dst_row[ix] += g;
                    }
                }
            }
        }
    }
}

/// Forward convolution. Returns `(output, unfolded input)`.
pub(crate) fn conv_forward(
    geo: &ConvGeometry,
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let out_channels = bias.len();
    let p = geo.out_pixels();
    let cols = im2col(geo, input);
    let mut out = Vec::with_capacity(out_channels * p);
    for &b in bias {
        out.extend(std::iter::repeat_n(b, p));
    }
    gemm(
        out_channels,
        geo.patch_len(),
        p,
        weight,
        false,
        &cols,
        false,
        1.0,
        &mut out,
    );
    (out, cols)
}

/// Gradients of a convolution given the upstream gradient `grad_out`.
/// Accumulates into the provided buffers; `input_grad` is skipped when `None`.
pub(crate) fn conv_backward(
    geo: &ConvGeometry,
    cols: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    weight_grad: Option<&mut [f64]>,
    bias_grad: Option<&mut [f64]>,
    input_grad: Option<&mut [f64]>,
) {
    let p = geo.out_pixels();
    let out_channels = grad_out.len() / p;
    let kp = geo.patch_len();
    if let Some(wg) = weight_grad {
        gemm(out_channels, p, kp, grad_out, false, cols, true, 1.0, wg);
    }
    if let Some(bg) = bias_grad {
        for (o, b) in bg.iter_mut().enumerate() {
            *b += grad_out[o * p..(o + 1) * p].iter().sum::<f64>();
        }
    }
    if let Some(ig) = input_grad {
        let mut cols_grad = vec![0.0; kp * p];
        gemm(
            kp,
            out_channels,
            p,
            weight,
            true,
            grad_out,
            false,
            0.0,
            &mut cols_grad,
        );
        col2im(geo, &cols_grad, ig);
    }
}

pub(crate) fn upsample_nearest2(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            let src = &input[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            let dst = &mut out[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = src[x / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample_nearest2`] (`h`, `w` are the low-resolution sizes).
pub(crate) fn upsample_nearest2_backward(
    grad_out: &[f64],
    c: usize,
    h: usize,
    w: usize,
    input_grad: &mut [f64],
) {
    let (oh, ow) = (2 * h, 2 * w);
    for ch in 0..c {
        for y in 0..oh {
            let src = &grad_out[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
            let dst = &mut input_grad[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            for (x, g) in src.iter().enumerate() {
                dst[x / 2] += g;
            }
        }
    }
}
