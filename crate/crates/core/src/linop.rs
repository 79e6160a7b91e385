//! Frequency-domain degradation operator `H` (circular blur followed by
//! decimation) together with its adjoint, thresholded pseudo-inverse and the
//! projection onto the row space of `H`.
//!
//! All operators act independently on each channel plane with periodic
//! boundaries. The subsampling phase is the top-left sample of every
//! `alpha x alpha` block.
//!
//! For `alpha == 1` the operator is diagonalized by the DFT and the
//! pseudo-inverse inverts every frequency whose response magnitude exceeds
//! `xi`. For `alpha > 1`, `H H^T` is a circulant on the low-resolution grid
//! whose spectrum is the alias-folded `|h|^2 / alpha^2`; the pseudo-inverse is
//! `H^T (H H^T)^+` with the same threshold applied to those folded values.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::image::Image;
use crate::kernels::Kernel;

#[derive(Debug, Clone)]
pub struct SpectralOperator {
    hr_shape: (usize, usize),
    alpha: usize,
    xi: f64,
    freq_response: Vec<Complex64>,
    inverse: InverseResponse,
    hr_fft: Fft2,
    lr_fft: Fft2,
}

#[derive(Debug, Clone)]
enum InverseResponse {
    /// `1 / h_f` where `|h_f| > xi`, exactly zero elsewhere (high-res grid).
    Deblur(Vec<Complex64>),
    /// Thresholded inverse of the folded `H H^T` spectrum (low-res grid).
    Decimated { folded: Vec<f64>, inverse: Vec<f64> },
}

impl SpectralOperator {
    /// Builds the operator for a `(rows, cols)` high-resolution grid.
    pub fn from_kernel(
        kernel: &Kernel,
        hr_shape: (usize, usize),
        alpha: usize,
        xi: f64,
    ) -> Result<Self> {
        let (rows, cols) = hr_shape;
        if alpha == 0 {
            return Err(Error::InvalidArgument("alpha must be at least 1".into()));
        }
        if rows == 0 || cols == 0 || rows % alpha != 0 || cols % alpha != 0 {
            return Err(Error::InvalidArgument(format!(
                "grid {rows}x{cols} is not divisible by alpha = {alpha}"
            )));
        }
        if kernel.size() > rows || kernel.size() > cols {
            return Err(Error::InvalidArgument(format!(
                "kernel of size {} does not fit a {rows}x{cols} grid",
                kernel.size()
            )));
        }
        if !(xi >= 0.0) || !xi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "threshold xi must be finite and non-negative, got {xi}"
            )));
        }

        let hr_fft = Fft2::new(rows, cols);
        let lr_fft = Fft2::new(rows / alpha, cols / alpha);

        // Center tap moved to the origin, negative offsets wrapped.
        let mut embedded = vec![0.0; rows * cols];
        let r = kernel.radius() as isize;
        for dy in -r..=r {
            for dx in -r..=r {
                let y = dy.rem_euclid(rows as isize) as usize;
                let x = dx.rem_euclid(cols as isize) as usize;
                embedded[y * cols + x] += kernel.at(dy, dx);
            }
        }
        let freq_response = hr_fft.forward_real(&embedded);

        let inverse = if alpha == 1 {
            InverseResponse::Deblur(
                freq_response
                    .iter()
                    .map(|h| {
                        if h.norm() > xi {
                            h.inv()
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    })
                    .collect(),
            )
        } else {
            let folded = fold_power(&freq_response, rows, cols, alpha);
            let inverse = folded
                .iter()
                .map(|&l| if l > xi { 1.0 / l } else { 0.0 })
                .collect();
            InverseResponse::Decimated { folded, inverse }
        };

        Ok(Self {
            hr_shape,
            alpha,
            xi,
            freq_response,
            inverse,
            hr_fft,
            lr_fft,
        })
    }

    pub fn identity(hr_shape: (usize, usize)) -> Result<Self> {
        Self::from_kernel(&Kernel::identity(), hr_shape, 1, 0.0)
    }

    /// `(rows, cols)` of the high-resolution grid.
    pub fn hr_shape(&self) -> (usize, usize) {
        self.hr_shape
    }

    /// `(rows, cols)` of the observation grid.
    pub fn lr_shape(&self) -> (usize, usize) {
        (self.hr_shape.0 / self.alpha, self.hr_shape.1 / self.alpha)
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// DFT of the centered kernel on the high-resolution grid, row-major.
    pub fn freq_response(&self) -> &[Complex64] {
        &self.freq_response
    }

    /// Per-frequency multiplier used by the pseudo-inverse for `alpha == 1`.
    pub fn pinv_response(&self) -> Option<&[Complex64]> {
        match &self.inverse {
            InverseResponse::Deblur(m) => Some(m),
            InverseResponse::Decimated { .. } => None,
        }
    }

    /// Spectrum of `H H^T` on the low-resolution grid. For `alpha == 1` this
    /// is `|h_f|^2`.
    pub fn folded_response(&self) -> Vec<f64> {
        match &self.inverse {
            InverseResponse::Deblur(_) => self.freq_response.iter().map(|h| h.norm_sqr()).collect(),
            InverseResponse::Decimated { folded, .. } => folded.clone(),
        }
    }

    /// Number of retained spectral components per channel (rank of `P_H`).
    pub fn retained_count(&self) -> usize {
        match &self.inverse {
            InverseResponse::Deblur(m) => m.iter().filter(|v| v.norm_sqr() > 0.0).count(),
            InverseResponse::Decimated { inverse, .. } => {
                inverse.iter().filter(|&&v| v > 0.0).count()
            }
        }
    }

    pub fn hr_plane_len(&self) -> usize {
        self.hr_shape.0 * self.hr_shape.1
    }

    pub fn lr_plane_len(&self) -> usize {
        let (r, c) = self.lr_shape();
        r * c
    }

    fn channels_of(&self, len: usize, plane: usize, what: &str) -> Result<usize> {
        if len == 0 || !len.is_multiple_of(plane) {
            return Err(Error::shape(
                format!("a multiple of {plane} samples ({what} grid)"),
                format!("{len} samples"),
            ));
        }
        Ok(len / plane)
    }

    fn per_channel(
        &self,
        input: &[f64],
        in_plane: usize,
        out_plane: usize,
        what: &str,
        f: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Vec<f64>> {
        let channels = self.channels_of(input.len(), in_plane, what)?;
        let mut out = Vec::with_capacity(channels * out_plane);
        for c in 0..channels {
            out.extend(f(&input[c * in_plane..(c + 1) * in_plane]));
        }
        Ok(out)
    }

    fn filter_hr(&self, x: &[f64], conj: bool) -> Vec<f64> {
        let mut spec = self.hr_fft.forward_real(x);
        for (s, h) in spec.iter_mut().zip(&self.freq_response) {
            *s *= if conj { h.conj() } else { *h };
        }
        self.hr_fft.inverse_real(spec)
    }

    fn decimate(&self, z: &[f64]) -> Vec<f64> {
        if self.alpha == 1 {
            return z.to_vec();
        }
        let (rows, cols) = self.hr_shape;
        let a = self.alpha;
        let mut out = Vec::with_capacity(self.lr_plane_len());
        for r in (0..rows).step_by(a) {
            for c in (0..cols).step_by(a) {
                out.push(z[r * cols + c]);
            }
        }
        out
    }

    fn zero_fill(&self, y: &[f64]) -> Vec<f64> {
        if self.alpha == 1 {
            return y.to_vec();
        }
        let (_, cols) = self.hr_shape;
        let (lr_rows, lr_cols) = self.lr_shape();
        let a = self.alpha;
        let mut out = vec![0.0; self.hr_plane_len()];
        for r in 0..lr_rows {
            for c in 0..lr_cols {
                out[(r * a) * cols + c * a] = y[r * lr_cols + c];
            }
        }
        out
    }

    fn h_plane(&self, x: &[f64]) -> Vec<f64> {
        self.decimate(&self.filter_hr(x, false))
    }

    fn ht_plane(&self, y: &[f64]) -> Vec<f64> {
        self.filter_hr(&self.zero_fill(y), true)
    }

    /// Applies `(H H^T)^+` on the low-resolution grid (`alpha > 1` only).
    fn lr_inverse(&self, y: &[f64], inverse: &[f64]) -> Vec<f64> {
        let mut spec = self.lr_fft.forward_real(y);
        for (s, &m) in spec.iter_mut().zip(inverse) {
            *s *= m;
        }
        self.lr_fft.inverse_real(spec)
    }

    fn pinv_plane(&self, y: &[f64]) -> Vec<f64> {
        match &self.inverse {
            InverseResponse::Deblur(m) => {
                let mut spec = self.hr_fft.forward_real(y);
                for (s, m) in spec.iter_mut().zip(m) {
                    *s *= m;
                }
                self.hr_fft.inverse_real(spec)
            }
            InverseResponse::Decimated { inverse, .. } => {
                self.ht_plane(&self.lr_inverse(y, inverse))
            }
        }
    }

    fn pinv_t_plane(&self, x: &[f64]) -> Vec<f64> {
        match &self.inverse {
            InverseResponse::Deblur(m) => {
                let mut spec = self.hr_fft.forward_real(x);
                for (s, m) in spec.iter_mut().zip(m) {
                    *s *= m.conj();
                }
                self.hr_fft.inverse_real(spec)
            }
            InverseResponse::Decimated { inverse, .. } => {
                self.lr_inverse(&self.h_plane(x), inverse)
            }
        }
    }

    fn ph_plane(&self, x: &[f64]) -> Vec<f64> {
        match &self.inverse {
            InverseResponse::Deblur(m) => {
                let mut spec = self.hr_fft.forward_real(x);
                for (s, m) in spec.iter_mut().zip(m) {
                    if m.norm_sqr() == 0.0 {
                        *s = Complex64::new(0.0, 0.0);
                    }
                }
                self.hr_fft.inverse_real(spec)
            }
            InverseResponse::Decimated { .. } => self.pinv_plane(&self.h_plane(x)),
        }
    }

    // Flat multi-channel entry points (planar layout, as in `Image`).

    /// `H x`: high-res planes to low-res planes.
    pub fn h(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.per_channel(
            x,
            self.hr_plane_len(),
            self.lr_plane_len(),
            "high-res",
            |p| self.h_plane(p),
        )
    }

    /// `H^T y`: low-res planes to high-res planes.
    pub fn ht(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.per_channel(
            y,
            self.lr_plane_len(),
            self.hr_plane_len(),
            "low-res",
            |p| self.ht_plane(p),
        )
    }

    /// `H^+ y`: low-res planes to high-res planes.
    pub fn pinv(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.per_channel(
            y,
            self.lr_plane_len(),
            self.hr_plane_len(),
            "low-res",
            |p| self.pinv_plane(p),
        )
    }

    /// `(H^+)^T x`: high-res planes to low-res planes.
    pub fn pinv_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.per_channel(
            x,
            self.hr_plane_len(),
            self.lr_plane_len(),
            "high-res",
            |p| self.pinv_t_plane(p),
        )
    }

    /// `P_H x = H^+ H x`.
    pub fn ph(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.per_channel(
            x,
            self.hr_plane_len(),
            self.hr_plane_len(),
            "high-res",
            |p| self.ph_plane(p),
        )
    }

    // Image-level operations.

    fn check_hr(&self, x: &Image) -> Result<()> {
        if x.plane_shape() != self.hr_shape {
            return Err(Error::shape(
                format!("{}x{} high-res image", self.hr_shape.1, self.hr_shape.0),
                x.shape_string(),
            ));
        }
        Ok(())
    }

    fn check_lr(&self, y: &Image) -> Result<()> {
        let (r, c) = self.lr_shape();
        if y.plane_shape() != (r, c) {
            return Err(Error::shape(
                format!("{c}x{r} low-res image"),
                y.shape_string(),
            ));
        }
        Ok(())
    }

    fn lr_image(&self, channels: usize, data: Vec<f64>) -> Result<Image> {
        let (r, c) = self.lr_shape();
        Image::new(c, r, channels, data)
    }

    fn hr_image(&self, channels: usize, data: Vec<f64>) -> Result<Image> {
        let (r, c) = self.hr_shape;
        Image::new(c, r, channels, data)
    }

    pub fn apply_h(&self, x: &Image) -> Result<Image> {
        self.check_hr(x)?;
        self.lr_image(x.channels(), self.h(x.data())?)
    }

    pub fn apply_ht(&self, y: &Image) -> Result<Image> {
        self.check_lr(y)?;
        self.hr_image(y.channels(), self.ht(y.data())?)
    }

    pub fn apply_pinv(&self, y: &Image) -> Result<Image> {
        self.check_lr(y)?;
        self.hr_image(y.channels(), self.pinv(y.data())?)
    }

    pub fn apply_pinv_t(&self, x: &Image) -> Result<Image> {
        self.check_hr(x)?;
        self.lr_image(x.channels(), self.pinv_t(x.data())?)
    }

    pub fn apply_ph(&self, x: &Image) -> Result<Image> {
        self.check_hr(x)?;
        self.hr_image(x.channels(), self.ph(x.data())?)
    }

    /// `u = H^T y / sigma^2`, the network input of GSURE training.
    pub fn sufficient_statistic(&self, y: &Image, sigma: f64) -> Result<Image> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise level must be positive and finite, got sigma = {sigma}"
            )));
        }
        let inv_var = 1.0 / (sigma * sigma);
        Ok(self.apply_ht(y)?.map(|v| v * inv_var))
    }

    /// Maximum-likelihood estimate `H^+ y`; seeds the ADMM `z` variable.
    pub fn ml_estimate(&self, y: &Image) -> Result<Image> {
        self.apply_pinv(y)
    }
}

/// `(1 / alpha^2) * sum over aliases of |h|^2`, on the low-resolution grid.
fn fold_power(freq: &[Complex64], rows: usize, cols: usize, alpha: usize) -> Vec<f64> {
    let (lr_rows, lr_cols) = (rows / alpha, cols / alpha);
    let scale = 1.0 / (alpha * alpha) as f64;
    let mut folded = vec![0.0; lr_rows * lr_cols];
    for k1 in 0..rows {
        for k2 in 0..cols {
            folded[(k1 % lr_rows) * lr_cols + (k2 % lr_cols)] += freq[k1 * cols + k2].norm_sqr();
        }
    }
    folded.iter_mut().for_each(|v| *v *= scale);
    folded
}
