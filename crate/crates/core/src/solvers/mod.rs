//! Restoration procedures: GSURE training, DIP training and plug-and-play
//! ADMM with a GSURE or least-squares fidelity.
//!
//! Every solver is a deterministic function of its inputs and seed. Ground
//! truth never enters a solver's decisions; a [`Monitor`] may observe the
//! current estimate so that traces can carry PSNR and projected MSE.

mod admm;
mod train;

pub use admm::{admm_pnp, AdmmConfig, AdmmOutput, Fidelity, NetworkInput};
pub use train::{train_dip, train_gsure};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, NetworkConfig, Tape, Var};
use crate::error::{Error, Result};
use crate::image::{psnr, Image};
use crate::linop::SpectralOperator;
use crate::losses::{projected_mse, DEFAULT_EPSILON};

/// Adam step size of GSURE and DIP training.
pub const DEFAULT_LR: f64 = 1e-2;

/// Which iterate becomes the restored image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    /// Minimum of the trailing moving average of the training loss.
    MinSmoothedLoss {
        window: usize,
    },
    FixedIteration {
        iteration: usize,
    },
    LastIteration,
}

impl Default for Selection {
    fn default() -> Self {
        Selection::MinSmoothedLoss { window: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    /// Probe step of the divergence estimate.
    pub epsilon: f64,
    pub selection: Selection,
    /// Trace every `log_every`-th iteration (the last one is always traced).
    pub log_every: usize,
    /// Average the probe with its mirror `-g` each iteration.
    pub paired_probe: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 4000,
            lr: DEFAULT_LR,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            selection: Selection::default(),
            log_every: 1,
            paired_probe: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// DIP defaults: same optimizer, but the last iterate is kept unless a
    /// stopping iteration is configured.
    pub fn dip() -> Self {
        Self {
            selection: Selection::LastIteration,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        match self.selection {
            Selection::MinSmoothedLoss { window: 0 } => {
                Err(Error::Config("smoothing window must be at least 1".into()))
            }
            Selection::FixedIteration { iteration } if iteration >= self.iterations => {
                Err(Error::Config(format!(
                    "selected iteration {iteration} is outside 0..{}",
                    self.iterations
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Ground-truth metrics of one estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub psnr: Option<f64>,
    pub projected_mse: Option<f64>,
}

/// Read-only view of the estimates produced during a run.
pub trait Monitor: Sync {
    fn observe(&self, estimate: &Image) -> Result<Observation>;
}

/// Monitor backed by a known clean image.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    truth: Image,
    op: SpectralOperator,
}

impl GroundTruth {
    pub fn new(truth: Image, op: SpectralOperator) -> Result<Self> {
        if truth.plane_shape() != op.hr_shape() {
            return Err(Error::shape(
                format!("{}x{} ground truth", op.hr_shape().1, op.hr_shape().0),
                truth.shape_string(),
            ));
        }
        Ok(Self { truth, op })
    }

    pub fn truth(&self) -> &Image {
        &self.truth
    }
}

impl Monitor for GroundTruth {
    fn observe(&self, estimate: &Image) -> Result<Observation> {
        Ok(Observation {
            psnr: Some(psnr(estimate, &self.truth)?),
            projected_mse: Some(projected_mse(&self.op, estimate, &self.truth)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub loss: f64,
    /// Trailing moving average used for model selection, when applicable.
    pub smoothed_loss: Option<f64>,
    pub psnr: Option<f64>,
    pub projected_mse: Option<f64>,
    /// `||f - z||` after the z-step (ADMM only).
    pub primal_residual: Option<f64>,
    pub wall_time_s: f64,
}

/// Best monitored iterate, recorded only when a monitor is attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleBest {
    pub iteration: usize,
    pub psnr: f64,
    #[serde(skip)]
    pub image: Option<Image>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestorationResult {
    pub method: String,
    #[serde(skip)]
    pub restored: Option<Image>,
    pub traces: Vec<TraceRecord>,
    pub selected_iteration: usize,
    pub seed: u64,
    pub parameter_count: usize,
    pub config: serde_json::Value,
    pub oracle: Option<OracleBest>,
    pub wall_time_s: f64,
}

impl RestorationResult {
    pub fn image(&self) -> &Image {
        self.restored
            .as_ref()
            .expect("solvers always set the restored image")
    }
}

/// Network configuration for images with `channels` channels. The input
/// width follows the image unless the input is free noise.
fn network_for(
    base: &NetworkConfig,
    channels: usize,
    noise_input: bool,
    input_scale: f64,
) -> NetworkConfig {
    let mut cfg = base.clone();
    cfg.out_channels = channels;
    if !noise_input {
        cfg.in_channels = channels;
    }
    cfg.input_scale = input_scale;
    cfg
}

/// Independent generator for one purpose within a run.
fn rng_stream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const PROBE_STREAM: u64 = 1;
const NOISE_INPUT_STREAM: u64 = 2;

/// `(rho / 2) ||f - center||^2`.
fn quadratic_penalty(tape: &mut Tape, f: Var, center: &[f64], rho: f64) -> Result<Var> {
    let d: Vec<f64> = tape
        .value(f)
        .data()
        .iter()
        .zip(center)
        .map(|(a, b)| a - b)
        .collect();
    let value = 0.5 * rho * d.iter().map(|v| v * v).sum::<f64>();
    let grad = d.into_iter().map(|v| rho * v).collect();
    tape.scalar_fn(value, vec![(f, grad)])
}

/// Loss history with a trailing moving average and running minimum.
#[derive(Debug)]
struct SmoothedMin {
    window: usize,
    losses: Vec<f64>,
    sum: f64,
    best: Option<(usize, f64)>,
}

impl SmoothedMin {
    fn new(window: usize) -> Self {
        Self {
            window,
            losses: Vec::new(),
            sum: 0.0,
            best: None,
        }
    }

    /// Pushes the loss of the next iteration; returns its smoothed value and
    /// whether it is a new minimum.
    fn push(&mut self, loss: f64) -> (f64, bool) {
        self.losses.push(loss);
        self.sum += loss;
        let n = self.losses.len();
        if n > self.window {
            self.sum -= self.losses[n - 1 - self.window];
        }
        // Recompute occasionally so rounding in the running sum cannot drift.
        if n.is_multiple_of(1024) {
            self.sum = self.losses[n.saturating_sub(self.window)..].iter().sum();
        }
        let avg = self.sum / n.min(self.window) as f64;
        let improved = self.best.is_none_or(|(_, b)| avg < b);
        if improved {
            self.best = Some((n - 1, avg));
        }
        (avg, improved)
    }
}

#[derive(Debug)]
struct Clock(Instant);

impl Clock {
    fn start() -> Self {
        Clock(Instant::now())
    }

    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
