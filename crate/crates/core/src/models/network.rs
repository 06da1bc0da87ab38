use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Binding, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::config::{ModelConfig, Variant};

/// A convolution whose weight and bias live in a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
}

impl ConvLayer {
    pub fn new(params: &mut ParamSet, name: &str, cin: usize, cout: usize, kernel: usize) -> Result<Self> {
        let weight = params.push(format!("{name}.weight"), Tensor::zeros([cout, cin, kernel, kernel]))?;
        let bias = params.push(format!("{name}.bias"), Tensor::zeros([1, cout, 1, 1]))?;
        Ok(ConvLayer {
            weight,
            bias,
            cin,
            cout,
            kernel,
        })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Binding, x: Var) -> Result<Var> {
        tape.conv2d(x, bound[self.weight], bound[self.bias], (self.kernel - 1) / 2)
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }
}

/// Squeeze-and-excite gating: pool, 1x1 down, ReLU, 1x1 up, sigmoid, rescale.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub squeeze: ConvLayer,
    pub excite: ConvLayer,
}

impl ChannelAttention {
    pub fn new(params: &mut ParamSet, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "channel attention needs {channels} channels divisible by reduction {reduction}"
            )));
        }
        Ok(ChannelAttention {
            squeeze: ConvLayer::new(params, &format!("{name}.squeeze"), channels, channels / reduction, 1)?,
            excite: ConvLayer::new(params, &format!("{name}.excite"), channels / reduction, channels, 1)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Binding, x: Var) -> Result<Var> {
        let pooled = tape.global_avg_pool(x);
        let s = self.squeeze.forward(tape, bound, pooled)?;
        let s = tape.relu(s);
        let e = self.excite.forward(tape, bound, s)?;
        let gate = tape.sigmoid(e);
        tape.scale_channels(x, gate)
    }
}

/// conv-ReLU-conv residual block, optionally followed by channel attention.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub attention: Option<ChannelAttention>,
}

impl ResBlock {
    fn forward(&self, tape: &mut Tape, bound: &Binding, x: Var, res_scale: f64) -> Result<Var> {
        let y = self.conv1.forward(tape, bound, x)?;
        let y = tape.relu(y);
        let mut y = self.conv2.forward(tape, bound, y)?;
        if let Some(att) = &self.attention {
            y = att.forward(tape, bound, y)?;
        }
        if res_scale != 1.0 {
            y = tape.scale(y, res_scale);
        }
        tape.add(x, y)
    }
}

#[derive(Clone, Debug)]
pub struct ResGroup {
    pub blocks: Vec<ResBlock>,
    pub conv: ConvLayer,
}

#[derive(Clone, Debug)]
enum Trunk {
    Blocks(Vec<ResBlock>),
    Groups(Vec<ResGroup>),
}

/// Outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub sr: Var,
    pub taps: Vec<Var>,
}

/// An instantiated EDSR-like or RCAN-like network.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    pub params: ParamSet,
    head: ConvLayer,
    trunk: Trunk,
    body_tail: ConvLayer,
    upsampler: Vec<(ConvLayer, usize)>,
    last: ConvLayer,
    tap_points: Vec<String>,
    tap_units: Vec<usize>,
}

/// Builds and initializes a network from `config` (seeded by `config.seed`).
pub fn build_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let c = config.channels;
    let mut params = ParamSet::new();
    let head = ConvLayer::new(&mut params, "head", 3, c, 3)?;
    let block = |params: &mut ParamSet, name: String| -> Result<ResBlock> {
        let attention = match config.variant {
            Variant::RcanLike => Some(ChannelAttention::new(
                params,
                &format!("{name}.attention"),
                c,
                config.reduction,
            )?),
            Variant::EdsrLike => None,
        };
        Ok(ResBlock {
            conv1: ConvLayer::new(params, &format!("{name}.conv1"), c, c, 3)?,
            conv2: ConvLayer::new(params, &format!("{name}.conv2"), c, c, 3)?,
            attention,
        })
    };
    let trunk = match config.variant {
        Variant::EdsrLike => Trunk::Blocks(
            (0..config.n_blocks)
                .map(|b| block(&mut params, format!("body.block{b}")))
                .collect::<Result<_>>()?,
        ),
        Variant::RcanLike => Trunk::Groups(
            (0..config.n_groups)
                .map(|g| {
                    let blocks = (0..config.n_blocks)
                        .map(|b| block(&mut params, format!("body.group{g}.block{b}")))
                        .collect::<Result<_>>()?;
                    let conv = ConvLayer::new(&mut params, &format!("body.group{g}.conv"), c, c, 3)?;
                    Ok(ResGroup { blocks, conv })
                })
                .collect::<Result<_>>()?,
        ),
    };
    let body_tail = ConvLayer::new(&mut params, "body.tail", c, c, 3)?;
    let upsampler = config
        .upsample_factors()
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok((
                ConvLayer::new(&mut params, &format!("upsampler.stage{i}"), c, r * r * c, 3)?,
                r,
            ))
        })
        .collect::<Result<_>>()?;
    let last = ConvLayer::new(&mut params, "tail", c, 3, 3)?;

    let tap_units = config.tap_units_list();
    let label = match config.variant {
        Variant::EdsrLike => "block_out",
        Variant::RcanLike => "group_out",
    };
    let tap_points = tap_units.iter().map(|u| format!("{label}/{u}")).collect();
    let mut model = Model {
        config: config.clone(),
        params,
        head,
        trunk,
        body_tail,
        upsampler,
        last,
        tap_points,
        tap_units,
    };
    model.init_params(config.seed);
    Ok(model)
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn scale(&self) -> usize {
        self.config.scale
    }

    pub fn channels(&self) -> usize {
        self.config.channels
    }

    pub fn tap_points(&self) -> &[String] {
        &self.tap_points
    }

    pub fn parameter_count(&self) -> usize {
        self.params.numel()
    }

    /// Every convolution in construction order.
    fn conv_layers(&self) -> Vec<&ConvLayer> {
        fn block<'a>(out: &mut Vec<&'a ConvLayer>, b: &'a ResBlock) {
            out.push(&b.conv1);
            out.push(&b.conv2);
            if let Some(a) = &b.attention {
                out.push(&a.squeeze);
                out.push(&a.excite);
            }
        }
        let mut out = vec![&self.head];
        match &self.trunk {
            Trunk::Blocks(blocks) => blocks.iter().for_each(|b| block(&mut out, b)),
            Trunk::Groups(groups) => {
                for g in groups {
                    g.blocks.iter().for_each(|b| block(&mut out, b));
                    out.push(&g.conv);
                }
            }
        }
        out.push(&self.body_tail);
        out.extend(self.upsampler.iter().map(|(c, _)| c));
        out.push(&self.last);
        out
    }

    /// Weights `~ U(-b, b)` with `b = sqrt(1 / fan_in)`, biases zero; fully
    /// determined by `seed`.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<(usize, usize, f64)> = self
            .conv_layers()
            .into_iter()
            .map(|l| (l.weight, l.bias, (1.0 / l.fan_in() as f64).sqrt()))
            .collect();
        for (w, b, bound) in layers {
            let shape = self.params.get(w).value.shape();
            self.params.get_mut(w).value = Tensor::uniform(shape, -bound, bound, &mut rng);
            self.params.get_mut(b).value.data_mut().fill(0.0);
        }
        self.config.seed = seed;
    }

    /// Runs the network on `x` of shape `(N, 3, h, w)`.
    pub fn forward(&self, tape: &mut Tape, bound: &Binding, x: Var) -> Result<ForwardOutput> {
        let s = tape.shape(x);
        if s.c != 3 {
            return Err(Error::InvalidShape(format!(
                "model input must have 3 channels, got {s}"
            )));
        }
        if bound.vars().len() != self.params.len() {
            return Err(Error::Contract("binding does not belong to this model".into()));
        }
        let res_scale = self.config.residual_scaling();
        let head = self.head.forward(tape, bound, x)?;
        let mut taps = Vec::with_capacity(self.tap_units.len());
        let mut h = head;
        match &self.trunk {
            Trunk::Blocks(blocks) => {
                for (i, b) in blocks.iter().enumerate() {
                    h = b.forward(tape, bound, h, res_scale)?;
                    if self.tap_units.contains(&(i + 1)) {
                        taps.push(h);
                    }
                }
            }
            Trunk::Groups(groups) => {
                for (i, g) in groups.iter().enumerate() {
                    let skip = h;
                    for b in &g.blocks {
                        h = b.forward(tape, bound, h, res_scale)?;
                    }
                    h = g.conv.forward(tape, bound, h)?;
                    h = tape.add(skip, h)?;
                    if self.tap_units.contains(&(i + 1)) {
                        taps.push(h);
                    }
                }
            }
        }
        let body = self.body_tail.forward(tape, bound, h)?;
        let mut y = tape.add(head, body)?;
        for (conv, r) in &self.upsampler {
            y = conv.forward(tape, bound, y)?;
            y = tape.pixel_shuffle(y, *r)?;
        }
        let sr = self.last.forward(tape, bound, y)?;
        Ok(ForwardOutput { sr, taps })
    }

    /// Inference on a fresh tape; returns the SR output and tap values.
    pub fn infer(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &bound, xv)?;
        let taps = out.taps.iter().map(|&t| tape.value(t).clone()).collect();
        Ok((tape.value(out.sr).clone(), taps))
    }
}
