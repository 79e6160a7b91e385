use rand::Rng;
use serde_json::json;

use super::{
    network_for, rng_stream, Clock, Monitor, OracleBest, RestorationResult, Selection, SmoothedMin,
    TraceRecord, TrainConfig, NOISE_INPUT_STREAM, PROBE_STREAM,
};
use crate::autodiff::{Network, NetworkConfig, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::image::{Image, PEAK};
use crate::linop::SpectralOperator;
use crate::losses::{gsure_loss, gsure_loss_paired, ls_loss, GsureProbe};

pub(super) fn check_observation(op: &SpectralOperator, y: &Image) -> Result<()> {
    let (r, c) = op.lr_shape();
    if y.plane_shape() != (r, c) {
        return Err(Error::shape(
            format!("{c}x{r} observation"),
            y.shape_string(),
        ));
    }
    Ok(())
}

/// Fixed DIP input: uniform noise in `[0, 0.1 * 255]`.
pub(super) fn noise_input(channels: usize, (h, w): (usize, usize), seed: u64) -> Tensor {
    let mut rng = rng_stream(seed, NOISE_INPUT_STREAM);
    let data = (0..channels * h * w)
        .map(|_| rng.random_range(0.0..0.1 * PEAK))
        .collect();
    Tensor::new(vec![channels, h, w], data).expect("sizes match")
}

/// Records the GSURE objective for the current parameters; returns the loss
/// and the unperturbed output.
pub(super) fn record_gsure(
    tape: &mut Tape,
    net: &Network,
    store: &ParamStore,
    op: &SpectralOperator,
    y: &Image,
    u: &Tensor,
    probe: &GsureProbe,
    paired: bool,
) -> Result<(Var, Var)> {
    let xu = tape.constant(u.clone());
    let f = net.forward(tape, store, xu)?;
    let plus = Tensor::new(u.shape().to_vec(), probe.perturb(u.data())?)?;
    let xp = tape.constant(plus);
    let fp = net.forward(tape, store, xp)?;
    let loss = if paired {
        let minus = Tensor::new(u.shape().to_vec(), probe.perturb_negative(u.data())?)?;
        let xm = tape.constant(minus);
        let fm = net.forward(tape, store, xm)?;
        gsure_loss_paired(tape, op, f, fp, fm, y, probe)?.0
    } else {
        gsure_loss(tape, op, f, fp, y, probe)?.0
    };
    Ok((loss, f))
}

/// Shared optimization loop. `objective` records the loss and the current
/// estimate on a fresh tape.
fn optimize(
    method: &str,
    mut store: ParamStore,
    cfg: &TrainConfig,
    monitor: Option<&dyn Monitor>,
    config: serde_json::Value,
    mut objective: impl FnMut(&mut Tape, &ParamStore) -> Result<(Var, Var)>,
) -> Result<RestorationResult> {
    let clock = Clock::start();
    let n = cfg.iterations;
    let mut smoother = match cfg.selection {
        Selection::MinSmoothedLoss { window } => Some(SmoothedMin::new(window)),
        _ => None,
    };
    let mut selected: Option<(usize, Image)> = None;
    let mut oracle: Option<OracleBest> = None;
    let mut traces = Vec::new();
    let mut last_finite = None;

    for i in 0..n {
        let mut tape = Tape::new();
        let (loss, f) = objective(&mut tape, &store)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged {
                iteration: i,
                last_finite,
            });
        }
        last_finite = Some(value);

        let mut estimate: Option<Image> = None;
        let mut estimate_of = |tape: &Tape| -> Result<Image> {
            if estimate.is_none() {
                estimate = Some(tape.value(f).to_image()?);
            }
            Ok(estimate.clone().expect("just set"))
        };

        let smoothed = match smoother.as_mut() {
            Some(s) => {
                let (avg, improved) = s.push(value);
                if improved {
                    selected = Some((i, estimate_of(&tape)?));
                }
                Some(avg)
            }
            None => None,
        };
        let pick = match cfg.selection {
            Selection::FixedIteration { iteration } => iteration == i,
            Selection::LastIteration => i + 1 == n,
            Selection::MinSmoothedLoss { .. } => false,
        };
        if pick {
            selected = Some((i, estimate_of(&tape)?));
        }

        if i % cfg.log_every == 0 || i + 1 == n {
            let obs = match monitor {
                Some(m) => m.observe(&estimate_of(&tape)?)?,
                None => Default::default(),
            };
            if let Some(p) = obs.psnr {
                if oracle.as_ref().is_none_or(|o| p > o.psnr) {
                    oracle = Some(OracleBest {
                        iteration: i,
                        psnr: p,
                        image: Some(estimate_of(&tape)?),
                    });
                }
            }
            traces.push(TraceRecord {
                iteration: i,
                loss: value,
                smoothed_loss: smoothed,
                psnr: obs.psnr,
                projected_mse: obs.projected_mse,
                primal_residual: None,
                wall_time_s: clock.seconds(),
            });
            log::debug!(
                "{method} iteration {i}: loss {value:.6e} psnr {:?}",
                obs.psnr
            );
        }

        if i + 1 < n {
            tape.backward(loss, &mut store)?;
            store.adam_step(cfg.lr, &cfg.adam)?;
        }
    }

    let (selected_iteration, restored) = selected.expect("every selection rule picks an iterate");
    Ok(RestorationResult {
        method: method.into(),
        restored: Some(restored),
        traces,
        selected_iteration,
        seed: cfg.seed,
        parameter_count: store.num_scalars(),
        config,
        oracle,
        wall_time_s: clock.seconds(),
    })
}

/// Trains `f(u; theta)` on the projected GSURE with `u = H^T y / sigma^2`.
///
/// The network's input scale is multiplied by `sigma^2`, so the first layer
/// sees `H^T y` at the configured scale whatever the noise level.
pub fn train_gsure(
    op: &SpectralOperator,
    y: &Image,
    sigma: f64,
    net_config: &NetworkConfig,
    cfg: &TrainConfig,
    monitor: Option<&dyn Monitor>,
) -> Result<RestorationResult> {
    cfg.validate()?;
    check_observation(op, y)?;
    let u = Tensor::from_image(&op.sufficient_statistic(y, sigma)?);
    let ncfg = network_for(
        net_config,
        y.channels(),
        false,
        net_config.input_scale * sigma * sigma,
    );
    let (net, store) = Network::init(&ncfg, cfg.seed)?;
    let mut rng = rng_stream(cfg.seed, PROBE_STREAM);
    let config = json!({ "train": cfg, "network": ncfg, "sigma": sigma });
    optimize("gsure", store, cfg, monitor, config, |tape, store| {
        let probe = GsureProbe::draw(&mut rng, u.len(), cfg.epsilon)?;
        record_gsure(tape, &net, store, op, y, &u, &probe, cfg.paired_probe)
    })
}

/// Deep-image-prior training: least squares from a fixed noise input.
pub fn train_dip(
    op: &SpectralOperator,
    y: &Image,
    net_config: &NetworkConfig,
    cfg: &TrainConfig,
    monitor: Option<&dyn Monitor>,
) -> Result<RestorationResult> {
    cfg.validate()?;
    check_observation(op, y)?;
    let ncfg = network_for(net_config, y.channels(), true, net_config.input_scale);
    let (net, store) = Network::init(&ncfg, cfg.seed)?;
    let z = noise_input(ncfg.in_channels, op.hr_shape(), cfg.seed);
    let config = json!({ "train": cfg, "network": ncfg });
    optimize("dip", store, cfg, monitor, config, |tape, store| {
        let x = tape.constant(z.clone());
        let f = net.forward(tape, store, x)?;
        Ok((ls_loss(tape, op, f, y)?, f))
    })
}
