use serde::{Deserialize, Serialize};
use serde_json::json;

use super::train::{check_observation, noise_input, record_gsure};
use super::{
    network_for, quadratic_penalty, rng_stream, Clock, Monitor, OracleBest, RestorationResult,
    TraceRecord, PROBE_STREAM,
};
use crate::autodiff::{AdamConfig, Network, NetworkConfig, Tape, Tensor};
use crate::denoisers::{denoise, DenoiserSpec};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::linop::SpectralOperator;
use crate::losses::{ls_loss, GsureProbe, DEFAULT_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    Gsure,
    Ls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkInput {
    /// `H^T y` (scaled by `1 / sigma^2` under the GSURE fidelity).
    Adjoint,
    /// Fixed uniform noise, as in DIP.
    Noise,
}

/// Which ADMM variable is returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmmOutput {
    /// The denoised split variable `z_N`.
    Z,
    /// The network output `f(u; theta_N)`.
    F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub n_iter: usize,
    /// Adam steps per theta-update.
    pub inner_iters: usize,
    pub inner_lr: f64,
    pub beta: f64,
    pub rho: f64,
    pub denoiser: DenoiserSpec,
    pub fidelity: Fidelity,
    pub input: NetworkInput,
    pub output: AdmmOutput,
    pub seed: u64,
    pub epsilon: f64,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl AdmmConfig {
    fn base(
        n_iter: usize,
        inner_iters: usize,
        inner_lr: f64,
        beta: f64,
        rho: f64,
        fidelity: Fidelity,
        input: NetworkInput,
    ) -> Self {
        Self {
            n_iter,
            inner_iters,
            inner_lr,
            beta,
            rho,
            denoiser: DenoiserSpec::tv(),
            fidelity,
            input,
            output: AdmmOutput::Z,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            adam: AdamConfig::default(),
        }
    }

    /// Deblurring P&P-GSURE: `beta / rho = 0.01`, 250 outer iterations of
    /// 20 Adam steps at `1e-3`.
    pub fn gsure_deblur(beta: f64) -> Self {
        Self::base(
            250,
            20,
            1e-3,
            beta,
            beta / 0.01,
            Fidelity::Gsure,
            NetworkInput::Adjoint,
        )
    }

    /// Super-resolution P&P-GSURE: `beta = 100`, `beta / rho = 10`, 50 outer
    /// iterations of 100 Adam steps at `1e-3`.
    pub fn gsure_sr() -> Self {
        Self::base(
            50,
            100,
            1e-3,
            100.0,
            10.0,
            Fidelity::Gsure,
            NetworkInput::Adjoint,
        )
    }

    /// Deblurring P&P-DIP: `beta = 0.1`, `beta / rho = 1`, 250 outer
    /// iterations of 20 Adam steps at `1e-2`.
    pub fn dip_deblur() -> Self {
        Self::base(250, 20, 1e-2, 0.1, 0.1, Fidelity::Ls, NetworkInput::Noise)
    }

    /// Super-resolution P&P-DIP: `beta / rho = 1`, 20 outer iterations of
    /// 250 Adam steps at `1e-3`.
    pub fn dip_sr(beta: f64) -> Self {
        Self::base(20, 250, 1e-3, beta, beta, Fidelity::Ls, NetworkInput::Noise)
    }

    /// Standard deviation handed to the denoiser.
    pub fn noise_level(&self) -> f64 {
        (self.beta / self.rho).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.inner_iters == 0 {
            return Err(Error::Config(
                "ADMM needs at least one outer and one inner iteration".into(),
            ));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        if !(self.inner_lr > 0.0 && self.inner_lr.is_finite()) {
            return Err(Error::Config(format!(
                "inner_lr must be positive, got {}",
                self.inner_lr
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        self.denoiser.validate()
    }
}

/// Plug-and-play ADMM with the network parameterization `x = f(u; theta)`.
///
/// Starting from `z_0 = H^+ y` and `v_0 = 0`, each outer iteration runs
/// `inner_iters` warm-started Adam steps on
/// `fidelity(f) + (rho / 2) ||f - z + v||^2`, then sets
/// `z = D(f + v, sqrt(beta / rho))` and `v = v + f - z`. The Adam moments
/// carry over between outer iterations.
pub fn admm_pnp(
    op: &SpectralOperator,
    y: &Image,
    sigma: Option<f64>,
    net_config: &NetworkConfig,
    cfg: &AdmmConfig,
    monitor: Option<&dyn Monitor>,
) -> Result<RestorationResult> {
    cfg.validate()?;
    check_observation(op, y)?;
    let channels = y.channels();
    let (u, ncfg) = match (cfg.fidelity, cfg.input) {
        (Fidelity::Gsure, input) => {
            let sigma = sigma.ok_or_else(|| {
                Error::InvalidArgument("the GSURE fidelity needs the noise level".into())
            })?;
            if input != NetworkInput::Adjoint {
                return Err(Error::Config(
                    "the GSURE fidelity needs the adjoint input".into(),
                ));
            }
            let u = Tensor::from_image(&op.sufficient_statistic(y, sigma)?);
            let scale = net_config.input_scale * sigma * sigma;
            (u, network_for(net_config, channels, false, scale))
        }
        (Fidelity::Ls, NetworkInput::Adjoint) => (
            Tensor::from_image(&op.apply_ht(y)?),
            network_for(net_config, channels, false, net_config.input_scale),
        ),
        (Fidelity::Ls, NetworkInput::Noise) => {
            let ncfg = network_for(net_config, channels, true, net_config.input_scale);
            (noise_input(ncfg.in_channels, op.hr_shape(), cfg.seed), ncfg)
        }
    };
    let (net, mut store) = Network::init(&ncfg, cfg.seed)?;
    let mut rng = rng_stream(cfg.seed, PROBE_STREAM);
    let noise_level = cfg.noise_level();
    let clock = Clock::start();

    let mut z = op.ml_estimate(y)?.into_data();
    let mut v = vec![0.0; z.len()];
    let mut traces = Vec::with_capacity(cfg.n_iter);
    let mut oracle: Option<OracleBest> = None;
    let mut last_finite = None;
    let mut output = None;
    let mut step = 0usize;

    for k in 1..=cfg.n_iter {
        let center: Vec<f64> = z.iter().zip(&v).map(|(a, b)| a - b).collect();
        let mut loss_value = 0.0;
        for _ in 0..cfg.inner_iters {
            let mut tape = Tape::new();
            let (fid, f) = match cfg.fidelity {
                Fidelity::Gsure => {
                    let probe = GsureProbe::draw(&mut rng, u.len(), cfg.epsilon)?;
                    record_gsure(&mut tape, &net, &store, op, y, &u, &probe, false)?
                }
                Fidelity::Ls => {
                    let x = tape.constant(u.clone());
                    let f = net.forward(&mut tape, &store, x)?;
                    (ls_loss(&mut tape, op, f, y)?, f)
                }
            };
            let pen = quadratic_penalty(&mut tape, f, &center, cfg.rho)?;
            let loss = tape.add(fid, pen)?;
            loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::Diverged {
                    iteration: step,
                    last_finite,
                });
            }
            last_finite = Some(loss_value);
            tape.backward(loss, &mut store)?;
            store.adam_step(cfg.inner_lr, &cfg.adam)?;
            step += 1;
        }

        let f_img = net.predict(&store, &u)?.to_image()?;
        let f = f_img.data();
        let noisy: Vec<f64> = f.iter().zip(&v).map(|(a, b)| a + b).collect();
        let z_img = denoise(&cfg.denoiser, &f_img.with_data(noisy.clone())?, noise_level)?;
        z = z_img.data().to_vec();
        for i in 0..v.len() {
            v[i] = noisy[i] - z[i];
        }
        let residual = f
            .iter()
            .zip(&z)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();

        let out = match cfg.output {
            AdmmOutput::Z => z_img,
            AdmmOutput::F => f_img,
        };
        let obs = match monitor {
            Some(m) => m.observe(&out)?,
            None => Default::default(),
        };
        if let Some(p) = obs.psnr {
            if oracle.as_ref().is_none_or(|o| p > o.psnr) {
                oracle = Some(OracleBest {
                    iteration: k,
                    psnr: p,
                    image: Some(out.clone()),
                });
            }
        }
        traces.push(TraceRecord {
            iteration: k,
            loss: loss_value,
            smoothed_loss: None,
            psnr: obs.psnr,
            projected_mse: obs.projected_mse,
            primal_residual: Some(residual),
            wall_time_s: clock.seconds(),
        });
        log::debug!(
            "admm iteration {k}: loss {loss_value:.6e} residual {residual:.4e} psnr {:?}",
            obs.psnr
        );
        output = Some(out);
    }

    let method = match (cfg.fidelity, cfg.input) {
        (Fidelity::Gsure, _) => "pnp-gsure",
        (Fidelity::Ls, NetworkInput::Noise) => "pnp-dip",
        (Fidelity::Ls, NetworkInput::Adjoint) => "pnp-ls",
    };
    Ok(RestorationResult {
        method: method.into(),
        restored: output,
        traces,
        selected_iteration: cfg.n_iter,
        seed: cfg.seed,
        parameter_count: store.num_scalars(),
        config: json!({ "admm": cfg, "network": ncfg, "sigma": sigma, "noise_level": noise_level }),
        oracle,
        wall_time_s: clock.seconds(),
    })
}
