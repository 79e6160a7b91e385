//! Encoder-decoder generator with skip connections.
//!
//! Level `i` of the encoder applies a 3x3 convolution (stride 2 for `i > 0`)
//! and a second 3x3 convolution, each followed by LeakyReLU. Every level but
//! the deepest also emits a 1x1 skip branch. The decoder walks back up:
//! nearest-neighbour x2 upsampling, concatenation with the skip branch, and a
//! 3x3 convolution with LeakyReLU. A 1x1 head and a sigmoid scaled to
//! `(0, 255)` produce the image. All convolutions pad circularly.
//!
//! With `normalize` set, every hidden convolution is followed by a learned
//! per-channel normalization over the spatial axes, as in batch
//! normalization with a batch of one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::image::PEAK;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Feature width per scale; its length is the network depth.
    pub channels: Vec<usize>,
    pub skip_channels: usize,
    pub leaky_slope: f64,
    /// Fixed factor applied to the input before the first convolution.
    pub input_scale: f64,
    /// Normalize the output of every hidden convolution.
    pub normalize: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            out_channels: 3,
            channels: vec![16, 32, 64],
            skip_channels: 4,
            leaky_slope: 0.1,
            input_scale: 1.0 / PEAK,
            normalize: true,
        }
    }
}

impl NetworkConfig {
    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    /// Spatial sizes must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Config("network depth must be at least 1".into()));
        }
        if self.in_channels == 0
            || self.out_channels == 0
            || self.skip_channels == 0
            || self.channels.contains(&0)
        {
            return Err(Error::Config(format!(
                "network channel counts must be positive: {self:?}"
            )));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::Config("input_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvParams {
    weight: ParamId,
    bias: ParamId,
    /// Scale and shift of the normalization following the convolution.
    norm: Option<(ParamId, ParamId)>,
}

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
struct Level {
    down: ConvParams,
    inner: ConvParams,
    skip: Option<ConvParams>,
    up: Option<ConvParams>,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    levels: Vec<Level>,
    head: ConvParams,
}

fn init_conv(
    store: &mut ParamStore,
    rng: &mut ChaCha20Rng,
    name: &str,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    slope: f64,
    norm: bool,
) -> ConvParams {
    // He-uniform weights, U(-sqrt(6 / ((1 + a^2) fan_in)), +...), keep the
    // activation scale through LeakyReLU(a); biases U(-1/sqrt(fan_in), +...).
    let fan_in = (in_ch * k * k) as f64;
    let w_bound = (6.0 / ((1.0 + slope * slope) * fan_in)).sqrt();
    let b_bound = 1.0 / fan_in.sqrt();
    let w = (0..out_ch * in_ch * k * k)
        .map(|_| rng.random_range(-w_bound..w_bound))
        .collect();
    let b = (0..out_ch)
        .map(|_| rng.random_range(-b_bound..b_bound))
        .collect();
    let weight = store.add(
        format!("{name}.weight"),
        Tensor::new(vec![out_ch, in_ch, k, k], w).expect("sizes match"),
    );
    let bias = store.add(
        format!("{name}.bias"),
        Tensor::new(vec![out_ch], b).expect("sizes match"),
    );
    let norm = norm.then(|| {
        let scale = store.add(
            format!("{name}.norm.scale"),
            Tensor::new(vec![out_ch], vec![1.0; out_ch]).expect("sizes match"),
        );
        let shift = store.add(format!("{name}.norm.shift"), Tensor::zeros(vec![out_ch]));
        (scale, shift)
    });
    ConvParams { weight, bias, norm }
}

impl Network {
    /// Builds the network and draws its parameters from `seed`.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<(Network, ParamStore)> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.set_seed(seed);
        let depth = config.depth();
        let s = config.skip_channels;
        let a = config.leaky_slope;
        let nrm = config.normalize;
        let mut levels = Vec::with_capacity(depth);
        let mut prev = config.in_channels;
        for (i, &c) in config.channels.iter().enumerate() {
            let down = init_conv(
                &mut store,
                &mut rng,
                &format!("enc{i}.down"),
                prev,
                c,
                3,
                a,
                nrm,
            );
            let inner = init_conv(
                &mut store,
                &mut rng,
                &format!("enc{i}.inner"),
                c,
                c,
                3,
                a,
                nrm,
            );
            let skip = (i + 1 < depth)
                .then(|| init_conv(&mut store, &mut rng, &format!("skip{i}"), c, s, 1, a, nrm));
            levels.push(Level {
                down,
                inner,
                skip,
                up: None,
            });
            prev = c;
        }
        for i in (0..depth.saturating_sub(1)).rev() {
            let from = config.channels[i + 1];
            let to = config.channels[i];
            levels[i].up = Some(init_conv(
                &mut store,
                &mut rng,
                &format!("dec{i}"),
                from + s,
                to,
                3,
                a,
                nrm,
            ));
        }
        let head = init_conv(
            &mut store,
            &mut rng,
            "head",
            config.channels[0],
            config.out_channels,
            1,
            1.0,
            false,
        );
        log::debug!(
            "initialized network with {} parameters ({} tensors)",
            store.num_scalars(),
            store.len()
        );
        Ok((
            Network {
                config: config.clone(),
                levels,
                head,
            },
            store,
        ))
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn conv(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        p: ConvParams,
        stride: usize,
    ) -> Result<Var> {
        let w = tape.param(store, p.weight);
        let b = tape.param(store, p.bias);
        tape.conv2d(x, w, b, stride)
    }

    fn conv_act(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        p: ConvParams,
        stride: usize,
    ) -> Result<Var> {
        let mut y = self.conv(tape, store, x, p, stride)?;
        if let Some((scale, shift)) = p.norm {
            let g = tape.param(store, scale);
            let b = tape.param(store, shift);
            y = tape.channel_norm(y, g, b, NORM_EPS)?;
        }
        Ok(tape.leaky_relu(y, self.config.leaky_slope))
    }

    /// Records `f(input; theta)` on `tape`. `input` is `[in_channels, h, w]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        let (c, h, w) = tape.value(input).chw()?;
        if c != self.config.in_channels {
            return Err(Error::shape(
                format!("{} input channels", self.config.in_channels),
                format!("{c} channels"),
            ));
        }
        let m = self.config.spatial_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::InvalidArgument(format!(
                "input {w}x{h} is not divisible by {m} (network depth {})",
                self.config.depth()
            )));
        }
        let mut x = tape.scale(input, self.config.input_scale);
        let mut skips = Vec::with_capacity(self.levels.len());
        for (i, level) in self.levels.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            x = self.conv_act(tape, store, x, level.down, stride)?;
            x = self.conv_act(tape, store, x, level.inner, 1)?;
            skips.push(match level.skip {
                Some(p) => Some(self.conv_act(tape, store, x, p, 1)?),
                None => None,
            });
        }
        for i in (0..self.levels.len().saturating_sub(1)).rev() {
            let up = tape.upsample2(x)?;
            let skip = skips[i].expect("every level above the deepest has a skip");
            let joined = tape.concat(up, skip)?;
            let p = self.levels[i]
                .up
                .expect("decoder conv exists above the deepest level");
            x = self.conv_act(tape, store, joined, p, 1)?;
        }
        let logits = self.conv(tape, store, x, self.head, 1)?;
        Ok(tape.sigmoid_scaled(logits, PEAK))
    }

    /// Forward pass without keeping the tape.
    pub fn predict(&self, store: &ParamStore, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, store, x)?;
        Ok(tape.value(y).clone())
    }
}
