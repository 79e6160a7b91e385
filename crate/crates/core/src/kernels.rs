//! Blur and anti-aliasing kernels used by the degradation scenarios.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default support of the Lorentzian blur `1 / (1 + x1^2 + x2^2)`.
pub const LORENTZIAN_SUPPORT: usize = 15;

const BINOMIAL_5: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];

/// Catmull-Rom parameter of the bicubic convolution kernel.
const BICUBIC_A: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelKind {
    Lorentzian,
    Uniform,
    SeparableBinomial,
    Gaussian { std: f64 },
    Bicubic { scale: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub kind: KernelKind,
    /// Taps per axis; always odd.
    pub support: usize,
}

impl KernelSpec {
    pub fn lorentzian() -> Self {
        Self {
            kind: KernelKind::Lorentzian,
            support: LORENTZIAN_SUPPORT,
        }
    }

    pub fn uniform(support: usize) -> Self {
        Self {
            kind: KernelKind::Uniform,
            support,
        }
    }

    pub fn separable_binomial() -> Self {
        Self {
            kind: KernelKind::SeparableBinomial,
            support: 5,
        }
    }

    /// Gaussian sampled on `support x support` integer offsets. The scenario
    /// tables use 25 taps for std 1.6 and 5 taps for std 0.4.
    pub fn gaussian(std: f64, support: usize) -> Self {
        Self {
            kind: KernelKind::Gaussian { std },
            support,
        }
    }

    /// Bicubic anti-aliasing filter for integer decimation `scale`
    /// (`4 * scale + 1` taps).
    pub fn bicubic(scale: usize) -> Self {
        Self {
            kind: KernelKind::Bicubic { scale },
            support: 4 * scale + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.support == 0 || self.support.is_multiple_of(2) {
            return Err(Error::InvalidKernel(format!(
                "support must be a positive odd number, got {}",
                self.support
            )));
        }
        match self.kind {
            KernelKind::Gaussian { std } if !(std > 0.0 && std.is_finite()) => Err(
                Error::InvalidKernel(format!("gaussian std must be positive, got {std}")),
            ),
            KernelKind::Bicubic { scale: 0 } => Err(Error::InvalidKernel(
                "bicubic scale must be positive".into(),
            )),
            KernelKind::SeparableBinomial if self.support != 5 => {
                Err(Error::InvalidKernel(format!(
                    "separable binomial kernel has 5 taps, got support {}",
                    self.support
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn describe(&self) -> String {
        let s = self.support;
        match self.kind {
            KernelKind::Lorentzian => format!("lorentzian {s}x{s}"),
            KernelKind::Uniform => format!("uniform {s}x{s}"),
            KernelKind::SeparableBinomial => "binomial [1,4,6,4,1]^2/256".to_string(),
            KernelKind::Gaussian { std } => format!("gaussian std={std} {s}x{s}"),
            KernelKind::Bicubic { scale } => format!("bicubic x{scale} {s}x{s}"),
        }
    }
}

/// Square, centered, unit-sum 2-D kernel stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    taps: Vec<f64>,
}

impl Kernel {
    /// Wraps raw taps. The kernel is not renormalized.
    pub fn from_taps(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) || taps.len() != size * size {
            return Err(Error::InvalidKernel(format!(
                "expected {size}x{size} taps with odd size, got {} taps",
                taps.len()
            )));
        }
        Ok(Self { size, taps })
    }

    pub fn identity() -> Self {
        Self {
            size: 1,
            taps: vec![1.0],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Tap at offset `(dy, dx)` from the center.
    pub fn at(&self, dy: isize, dx: isize) -> f64 {
        let r = self.radius() as isize;
        self.taps[((dy + r) * self.size as isize + (dx + r)) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    fn normalized(mut self) -> Self {
        let s = self.sum();
        self.taps.iter_mut().for_each(|t| *t /= s);
        self
    }
}

fn outer(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter()
        .flat_map(|&x| b.iter().map(move |&y| x * y))
        .collect()
}

/// Cubic convolution kernel `u(t)` with parameter `a`.
fn cubic(t: f64, a: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t.powi(2) + 1.0
    } else if t < 2.0 {
        a * t.powi(3) - 5.0 * a * t.powi(2) + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

pub fn build_kernel(spec: &KernelSpec) -> Result<Kernel> {
    spec.validate()?;
    let n = spec.support;
    let r = (n / 2) as isize;
    let offsets: Vec<f64> = (-r..=r).map(|i| i as f64).collect();
    let taps = match spec.kind {
        KernelKind::Lorentzian => {
            let mut taps = Vec::with_capacity(n * n);
            for &y in &offsets {
                for &x in &offsets {
                    taps.push(1.0 / (1.0 + x * x + y * y));
                }
            }
            taps
        }
        KernelKind::Uniform => vec![1.0; n * n],
        KernelKind::SeparableBinomial => outer(&BINOMIAL_5, &BINOMIAL_5)
            .into_iter()
            .map(|v| v / 256.0)
            .collect(),
        KernelKind::Gaussian { std } => {
            let g: Vec<f64> = offsets
                .iter()
                .map(|&t| (-(t * t) / (2.0 * std * std)).exp())
                .collect();
            outer(&g, &g)
        }
        KernelKind::Bicubic { scale } => {
            let s = scale as f64;
            let g: Vec<f64> = offsets
                .iter()
                .map(|&t| cubic(t / s, BICUBIC_A) / s)
                .collect();
            outer(&g, &g)
        }
    };
    Ok(Kernel { size: n, taps }.normalized())
}
