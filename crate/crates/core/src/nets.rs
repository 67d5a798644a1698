//! Generator, patch discriminator, and evaluation classifier.
//!
//! Builders create the parameter stack with stable names and a plan of
//! slot indices; forwards replay the plan on a tape. Everything is
//! fully convolutional, so a built net accepts any spatial size its
//! stride arithmetic divides.

use crate::error::TensorError;
use crate::kernels::elem::Activation;
use crate::kernels::Scalar;
use crate::rng::SplitMix64;
use crate::stack::LayerStack;
use crate::tape::{Binding, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Normalization epsilon used by every instance norm in the networks.
pub const NORM_EPS: f64 = 1e-5;
/// Std of the Gaussian weight init.
pub const INIT_STD: f32 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferKind {
    Resnet,
    Densenet,
}

impl TransferKind {
    pub fn parse(s: &str) -> Result<Self, TensorError> {
        match s {
            "resnet" => Ok(TransferKind::Resnet),
            "densenet" => Ok(TransferKind::Densenet),
            other => Err(TensorError::bad_config(
                "build_generator",
                format!("unknown transfer kind '{other}' (expected resnet|densenet)"),
            )),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TransferKind::Resnet => "resnet",
            TransferKind::Densenet => "densenet",
        }
    }

    /// Block count used when none is configured: ResNet-6 / DenseNet-5.
    pub fn default_blocks(&self) -> usize {
        match self {
            TransferKind::Resnet => 6,
            TransferKind::Densenet => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub in_channels: usize,
    /// First encoder width; the encoder widens 1x/2x/4x from here.
    pub base_filters: usize,
    pub transfer_kind: TransferKind,
    pub transfer_blocks: usize,
    /// Channels each dense block emits. Defaults to the encoder output
    /// width so block l consumes growth*l channels.
    pub growth_rate: usize,
}

impl GeneratorConfig {
    pub fn new(transfer_kind: TransferKind) -> Self {
        GeneratorConfig {
            image_size: 64,
            in_channels: 1,
            base_filters: 64,
            transfer_kind,
            transfer_blocks: transfer_kind.default_blocks(),
            growth_rate: 256,
        }
    }

    /// Encoder output width (Table ratio 1x -> 2x -> 4x).
    pub fn encoder_out(&self) -> usize {
        4 * self.base_filters
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.image_size < 8 || self.image_size % 4 != 0 {
            return Err(TensorError::bad_config(
                "build_generator",
                format!(
                    "image_size {} must be a multiple of 4 and at least 8",
                    self.image_size
                ),
            ));
        }
        if self.in_channels == 0
            || self.base_filters == 0
            || self.transfer_blocks == 0
            || self.growth_rate == 0
        {
            return Err(TensorError::bad_config(
                "build_generator",
                "channel and block counts must be positive",
            ));
        }
        Ok(())
    }
}

/// Slot indices of one convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvUnit {
    pub w: usize,
    pub b: usize,
}

/// Slot indices of one instance norm.
#[derive(Debug, Clone, Copy)]
pub struct NormUnit {
    pub gain: usize,
    pub shift: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvNorm {
    conv: ConvUnit,
    norm: NormUnit,
}

/// One residual block: x + Norm(Conv(ReLU(Norm(Conv(x))))).
#[derive(Debug, Clone, Copy)]
pub struct ResBlockPlan {
    c0: ConvNorm,
    c1: ConvNorm,
    pub channels: usize,
}

/// One dense block: Conv(ReLU(Norm(concat(xs)))) emitting `growth` channels.
#[derive(Debug, Clone, Copy)]
pub struct DenseBlockPlan {
    norm: NormUnit,
    conv: ConvUnit,
    pub in_channels: usize,
    pub growth: usize,
}

#[derive(Debug, Clone)]
enum TransferPlan {
    Resnet(Vec<ResBlockPlan>),
    Densenet(Vec<DenseBlockPlan>),
}

#[derive(Debug, Clone)]
struct GenPlan {
    enc: Vec<(ConvNorm, usize, usize, usize)>, // (slots, kernel, stride, pad)
    transfer: TransferPlan,
    dec: Vec<(ConvNorm, usize)>, // (slots, kernel); stride 2, pad 1, out_pad 1
    out: (ConvUnit, usize),      // final conv (slots, kernel), stride 1
}

/// Row of the architecture summary used by fidelity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        filters: usize,
        stride: usize,
    },
    /// `upsample` is the inverse stride: 2 means the fractional stride 1/2.
    Deconv {
        kernel: usize,
        filters: usize,
        upsample: usize,
    },
    ResBlock {
        channels: usize,
    },
    DenseBlock {
        growth: usize,
        in_channels: usize,
    },
}

fn add_conv(
    stack: &mut LayerStack,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    rng: &mut SplitMix64,
) -> ConvUnit {
    let w = stack.add(
        &format!("{name}.weight"),
        Tensor::randn(Shape::new(c_out, c_in, k, k), INIT_STD, rng),
    );
    let b = stack.add(
        &format!("{name}.bias"),
        Tensor::zeros(Shape::per_channel(c_out)),
    );
    ConvUnit { w, b }
}

/// Transposed conv weights are stored as (C_in, C_out, k, k).
fn add_deconv(
    stack: &mut LayerStack,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
    rng: &mut SplitMix64,
) -> ConvUnit {
    let w = stack.add(
        &format!("{name}.weight"),
        Tensor::randn(Shape::new(c_in, c_out, k, k), INIT_STD, rng),
    );
    let b = stack.add(
        &format!("{name}.bias"),
        Tensor::zeros(Shape::per_channel(c_out)),
    );
    ConvUnit { w, b }
}

fn add_norm(stack: &mut LayerStack, name: &str, c: usize) -> NormUnit {
    let gain = stack.add(
        &format!("{name}.gain"),
        Tensor::full(Shape::per_channel(c), 1.0),
    );
    let shift = stack.add(
        &format!("{name}.shift"),
        Tensor::zeros(Shape::per_channel(c)),
    );
    NormUnit { gain, shift }
}

fn conv_norm(
    stack: &mut LayerStack,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    rng: &mut SplitMix64,
) -> ConvNorm {
    ConvNorm {
        conv: add_conv(stack, name, c_out, c_in, k, rng),
        norm: add_norm(stack, name, c_out),
    }
}

pub struct Generator {
    pub cfg: GeneratorConfig,
    pub stack: LayerStack,
    plan: GenPlan,
}

impl Generator {
    /// Encoder 1x/2x/4x widths, the configured transfer module, mirrored
    /// decoder, final tanh projection back to `in_channels`.
    pub fn build(
        component: &str,
        cfg: GeneratorConfig,
        rng: &mut SplitMix64,
    ) -> Result<Generator, TensorError> {
        cfg.validate()?;
        let mut stack = LayerStack::new(component);
        let bf = cfg.base_filters;
        let enc_out = cfg.encoder_out();

        let enc = vec![
            (
                conv_norm(&mut stack, "enc0", bf, cfg.in_channels, 7, rng),
                7,
                1,
                3,
            ),
            (conv_norm(&mut stack, "enc1", 2 * bf, bf, 3, rng), 3, 2, 1),
            (
                conv_norm(&mut stack, "enc2", enc_out, 2 * bf, 3, rng),
                3,
                2,
                1,
            ),
        ];

        let (transfer, dec_in) = match cfg.transfer_kind {
            TransferKind::Resnet => {
                let blocks = (0..cfg.transfer_blocks)
                    .map(|i| ResBlockPlan {
                        c0: conv_norm(
                            &mut stack,
                            &format!("res{i}.c0"),
                            enc_out,
                            enc_out,
                            3,
                            rng,
                        ),
                        c1: conv_norm(
                            &mut stack,
                            &format!("res{i}.c1"),
                            enc_out,
                            enc_out,
                            3,
                            rng,
                        ),
                        channels: enc_out,
                    })
                    .collect();
                (TransferPlan::Resnet(blocks), enc_out)
            }
            TransferKind::Densenet => {
                let g = cfg.growth_rate;
                let blocks = (0..cfg.transfer_blocks)
                    .map(|i| {
                        let c_in = enc_out + i * g;
                        DenseBlockPlan {
                            norm: add_norm(&mut stack, &format!("dense{i}.norm"), c_in),
                            conv: add_conv(&mut stack, &format!("dense{i}.conv"), g, c_in, 3, rng),
                            in_channels: c_in,
                            growth: g,
                        }
                    })
                    .collect();
                (TransferPlan::Densenet(blocks), g)
            }
        };

        let dec = vec![
            (
                ConvNorm {
                    conv: add_deconv(&mut stack, "dec0", dec_in, 2 * bf, 3, rng),
                    norm: add_norm(&mut stack, "dec0", 2 * bf),
                },
                3,
            ),
            (
                ConvNorm {
                    conv: add_deconv(&mut stack, "dec1", 2 * bf, bf, 3, rng),
                    norm: add_norm(&mut stack, "dec1", bf),
                },
                3,
            ),
        ];
        let out = (add_conv(&mut stack, "out", cfg.in_channels, bf, 7, rng), 7);

        Ok(Generator {
            cfg,
            stack,
            plan: GenPlan {
                enc,
                transfer,
                dec,
                out,
            },
        })
    }

    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>) -> Binding {
        self.stack.bind(tape)
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        x: Var,
    ) -> Result<Var, TensorError> {
        let mut h = x;
        for (cn, _k, stride, pad) in &self.plan.enc {
            h = tape.conv2d(h, bind.var(cn.conv.w), bind.var(cn.conv.b), *stride, *pad)?;
            h = tape.instance_norm(h, bind.var(cn.norm.gain), bind.var(cn.norm.shift), NORM_EPS)?;
            h = tape.pointwise(h, Activation::Relu);
        }
        h = match &self.plan.transfer {
            TransferPlan::Resnet(blocks) => {
                let mut cur = h;
                for block in blocks {
                    cur = resnet_block_forward(tape, bind, block, cur)?;
                }
                cur
            }
            TransferPlan::Densenet(blocks) => {
                let mut xs = vec![h];
                let mut last = h;
                for block in blocks {
                    last = dense_block_forward(tape, bind, block, &xs)?;
                    xs.push(last);
                }
                last
            }
        };
        for (cn, _k) in &self.plan.dec {
            h = tape.conv_transpose2d(h, bind.var(cn.conv.w), bind.var(cn.conv.b), 2, 1, 1)?;
            h = tape.instance_norm(h, bind.var(cn.norm.gain), bind.var(cn.norm.shift), NORM_EPS)?;
            h = tape.pointwise(h, Activation::Relu);
        }
        let (out, _k) = &self.plan.out;
        h = tape.conv2d(h, bind.var(out.w), bind.var(out.b), 1, 3)?;
        Ok(tape.pointwise(h, Activation::Tanh))
    }

    /// Architecture summary in layer order.
    pub fn layer_inventory(&self) -> Vec<LayerSpec> {
        let mut inv = Vec::new();
        let bf = self.cfg.base_filters;
        for (i, (_, k, stride, _)) in self.plan.enc.iter().enumerate() {
            inv.push(LayerSpec::Conv {
                kernel: *k,
                filters: bf << i,
                stride: *stride,
            });
        }
        match &self.plan.transfer {
            TransferPlan::Resnet(blocks) => {
                for b in blocks {
                    inv.push(LayerSpec::ResBlock {
                        channels: b.channels,
                    });
                }
            }
            TransferPlan::Densenet(blocks) => {
                for b in blocks {
                    inv.push(LayerSpec::DenseBlock {
                        growth: b.growth,
                        in_channels: b.in_channels,
                    });
                }
            }
        }
        inv.push(LayerSpec::Deconv {
            kernel: 3,
            filters: 2 * bf,
            upsample: 2,
        });
        inv.push(LayerSpec::Deconv {
            kernel: 3,
            filters: bf,
            upsample: 2,
        });
        inv.push(LayerSpec::Conv {
            kernel: 7,
            filters: self.cfg.in_channels,
            stride: 1,
        });
        inv
    }

    /// Dense-block input widths, for the channel-ledger audit.
    pub fn dense_ledger(&self) -> Vec<usize> {
        match &self.plan.transfer {
            TransferPlan::Densenet(blocks) => blocks.iter().map(|b| b.in_channels).collect(),
            TransferPlan::Resnet(_) => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.stack.param_count()
    }

    /// Parameters of the transfer module only (convs plus norm affine).
    pub fn transfer_param_count(&self) -> usize {
        self.transfer_counts().0
    }

    /// Conv-only (weights + biases) parameter count of the transfer module.
    pub fn transfer_conv_param_count(&self) -> usize {
        self.transfer_counts().1
    }

    fn transfer_counts(&self) -> (usize, usize) {
        let unit = |slots: &[usize]| -> usize {
            slots
                .iter()
                .map(|&i| self.stack.get(i).shape().len())
                .sum()
        };
        match &self.plan.transfer {
            TransferPlan::Resnet(blocks) => {
                let conv: usize = blocks
                    .iter()
                    .map(|b| unit(&[b.c0.conv.w, b.c0.conv.b, b.c1.conv.w, b.c1.conv.b]))
                    .sum();
                let norm: usize = blocks
                    .iter()
                    .map(|b| unit(&[b.c0.norm.gain, b.c0.norm.shift, b.c1.norm.gain, b.c1.norm.shift]))
                    .sum();
                (conv + norm, conv)
            }
            TransferPlan::Densenet(blocks) => {
                let conv: usize = blocks.iter().map(|b| unit(&[b.conv.w, b.conv.b])).sum();
                let norm: usize = blocks
                    .iter()
                    .map(|b| unit(&[b.norm.gain, b.norm.shift]))
                    .sum();
                (conv + norm, conv)
            }
        }
    }
}

/// Eq-5 residual block: returns x + H(x) where H is
/// Conv3x3-Norm-ReLU-Conv3x3-Norm. Shape-preserving.
pub fn resnet_block_forward<T: Scalar>(
    tape: &mut Tape<T>,
    bind: &Binding,
    block: &ResBlockPlan,
    x: Var,
) -> Result<Var, TensorError> {
    if tape.shape(x).c != block.channels {
        return Err(TensorError::DimMismatch {
            op: "resnet_block",
            what: "channel count",
            lhs: tape.shape(x),
            rhs: Shape::per_channel(block.channels),
        });
    }
    let mut h = tape.conv2d(x, bind.var(block.c0.conv.w), bind.var(block.c0.conv.b), 1, 1)?;
    h = tape.instance_norm(
        h,
        bind.var(block.c0.norm.gain),
        bind.var(block.c0.norm.shift),
        NORM_EPS,
    )?;
    h = tape.pointwise(h, Activation::Relu);
    h = tape.conv2d(h, bind.var(block.c1.conv.w), bind.var(block.c1.conv.b), 1, 1)?;
    h = tape.instance_norm(
        h,
        bind.var(block.c1.norm.gain),
        bind.var(block.c1.norm.shift),
        NORM_EPS,
    )?;
    tape.residual_add(x, h)
}

/// Eq-6 dense block: H(concat(xs)) where H is Norm-ReLU-Conv3x3 emitting
/// `growth` channels. `xs` carries the encoder output plus every previous
/// emission.
pub fn dense_block_forward<T: Scalar>(
    tape: &mut Tape<T>,
    bind: &Binding,
    block: &DenseBlockPlan,
    xs: &[Var],
) -> Result<Var, TensorError> {
    let joined = if xs.len() == 1 {
        xs[0]
    } else {
        tape.concat_channels(xs)?
    };
    let mut h = tape.instance_norm(
        joined,
        bind.var(block.norm.gain),
        bind.var(block.norm.shift),
        NORM_EPS,
    )?;
    h = tape.pointwise(h, Activation::Relu);
    tape.conv2d(h, bind.var(block.conv.w), bind.var(block.conv.b), 1, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub base_filters: usize,
    /// Number of stride-2 downsampling convs.
    pub n_layers: usize,
}

impl DiscriminatorConfig {
    pub fn new() -> Self {
        DiscriminatorConfig {
            in_channels: 1,
            base_filters: 64,
            n_layers: 3,
        }
    }

    /// Shrink depth on small canvases (two downsamples at 32 px).
    pub fn for_image_size(size: usize) -> Self {
        DiscriminatorConfig {
            n_layers: if size <= 32 { 2 } else { 3 },
            ..Self::new()
        }
    }
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self::new()
    }
}

struct DiscLayerPlan {
    conv: ConvUnit,
    norm: Option<NormUnit>,
    stride: usize,
    kernel: usize,
}

/// PatchGAN: 4x4 convs, LeakyReLU(0.2), instance norm everywhere except
/// the first layer, sigmoid patch map out.
pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    pub stack: LayerStack,
    layers: Vec<DiscLayerPlan>,
    out: ConvUnit,
}

impl Discriminator {
    pub fn build(
        component: &str,
        cfg: DiscriminatorConfig,
        rng: &mut SplitMix64,
    ) -> Result<Discriminator, TensorError> {
        if cfg.in_channels == 0 || cfg.base_filters == 0 || cfg.n_layers == 0 {
            return Err(TensorError::bad_config(
                "build_discriminator",
                "channel and layer counts must be positive",
            ));
        }
        let mut stack = LayerStack::new(component);
        let bf = cfg.base_filters;
        let width = |i: usize| bf * (1 << i.min(3));
        let mut layers = Vec::new();
        layers.push(DiscLayerPlan {
            conv: add_conv(&mut stack, "l0", bf, cfg.in_channels, 4, rng),
            norm: None,
            stride: 2,
            kernel: 4,
        });
        for i in 1..cfg.n_layers {
            layers.push(DiscLayerPlan {
                conv: add_conv(&mut stack, &format!("l{i}"), width(i), width(i - 1), 4, rng),
                norm: Some(add_norm(&mut stack, &format!("l{i}"), width(i))),
                stride: 2,
                kernel: 4,
            });
        }
        let pen = cfg.n_layers;
        layers.push(DiscLayerPlan {
            conv: add_conv(
                &mut stack,
                &format!("l{pen}"),
                width(pen),
                width(pen - 1),
                4,
                rng,
            ),
            norm: Some(add_norm(&mut stack, &format!("l{pen}"), width(pen))),
            stride: 1,
            kernel: 4,
        });
        let out = add_conv(&mut stack, "out", 1, width(pen), 4, rng);
        Ok(Discriminator {
            cfg,
            stack,
            layers,
            out,
        })
    }

    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>) -> Binding {
        self.stack.bind(tape)
    }

    /// Returns the sigmoid patch decision map, one channel, spatial.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        x: Var,
    ) -> Result<Var, TensorError> {
        let mut h = x;
        for layer in &self.layers {
            h = tape.conv2d(
                h,
                bind.var(layer.conv.w),
                bind.var(layer.conv.b),
                layer.stride,
                1,
            )?;
            if let Some(norm) = &layer.norm {
                h = tape.instance_norm(h, bind.var(norm.gain), bind.var(norm.shift), NORM_EPS)?;
            }
            h = tape.pointwise(h, Activation::LeakyRelu);
        }
        h = tape.conv2d(h, bind.var(self.out.w), bind.var(self.out.b), 1, 1)?;
        Ok(tape.pointwise(h, Activation::Sigmoid))
    }

    /// (kernel, stride) pairs of every conv, in order.
    pub fn layer_geometry(&self) -> Vec<(usize, usize)> {
        let mut g: Vec<(usize, usize)> = self
            .layers
            .iter()
            .map(|l| (l.kernel, l.stride))
            .collect();
        g.push((4, 1)); // final projection
        g
    }

    /// Receptive field of one output unit via the recurrence
    /// r += (k - 1) * jump; jump *= stride.
    pub fn receptive_field(&self) -> usize {
        let mut r = 1usize;
        let mut jump = 1usize;
        for (k, s) in self.layer_geometry() {
            r += (k - 1) * jump;
            jump *= s;
        }
        r
    }

    pub fn param_count(&self) -> usize {
        self.stack.param_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierConfig {
    pub n_classes: usize,
    pub image_size: usize,
    pub in_channels: usize,
    pub conv_widths: (usize, usize),
}

impl ClassifierConfig {
    pub fn new(n_classes: usize, image_size: usize) -> Self {
        ClassifierConfig {
            n_classes,
            image_size,
            in_channels: 1,
            conv_widths: (32, 64),
        }
    }
}

/// Output handles of one classifier forward pass.
pub struct ClassifierOutput {
    /// (N, n_classes, 1, 1) logits.
    pub logits: Var,
    /// Post-second-conv feature map, the designated style layer.
    pub style_layer: Var,
}

/// Small conv classifier standing in for a pretrained recognizer:
/// two Conv-Norm-ReLU stages with 2x downsampling, spatial mean pooling,
/// and a dense projection to class logits.
pub struct Classifier {
    pub cfg: ClassifierConfig,
    pub stack: LayerStack,
    conv0: ConvNorm,
    conv1: ConvNorm,
    fc: ConvUnit,
}

impl Classifier {
    pub fn build(
        component: &str,
        cfg: ClassifierConfig,
        rng: &mut SplitMix64,
    ) -> Result<Classifier, TensorError> {
        if cfg.n_classes < 2 {
            return Err(TensorError::bad_config(
                "build_classifier",
                format!("need at least 2 classes, got {}", cfg.n_classes),
            ));
        }
        if cfg.image_size < 4 || cfg.image_size % 4 != 0 {
            return Err(TensorError::bad_config(
                "build_classifier",
                format!("image_size {} must be a multiple of 4", cfg.image_size),
            ));
        }
        let (w0, w1) = cfg.conv_widths;
        let mut stack = LayerStack::new(component);
        let conv0 = conv_norm(&mut stack, "conv0", w0, cfg.in_channels, 3, rng);
        let conv1 = conv_norm(&mut stack, "conv1", w1, w0, 3, rng);
        let fc = add_conv(&mut stack, "fc", cfg.n_classes, w1, 1, rng);
        Ok(Classifier {
            cfg,
            stack,
            conv0,
            conv1,
            fc,
        })
    }

    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>) -> Binding {
        self.stack.bind(tape)
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        x: Var,
    ) -> Result<ClassifierOutput, TensorError> {
        let mut h = x;
        for cn in [&self.conv0, &self.conv1] {
            h = tape.conv2d(h, bind.var(cn.conv.w), bind.var(cn.conv.b), 2, 1)?;
            h = tape.instance_norm(h, bind.var(cn.norm.gain), bind.var(cn.norm.shift), NORM_EPS)?;
            h = tape.pointwise(h, Activation::Relu);
        }
        let style_layer = h;
        let pooled = tape.mean_spatial(h);
        let logits = tape.conv2d(pooled, bind.var(self.fc.w), bind.var(self.fc.b), 1, 0)?;
        Ok(ClassifierOutput {
            logits,
            style_layer,
        })
    }

    /// Channel count of the style layer.
    pub fn style_channels(&self) -> usize {
        self.cfg.conv_widths.1
    }

    pub fn param_count(&self) -> usize {
        self.stack.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::elem::LossKind;

    fn rng() -> SplitMix64 {
        SplitMix64::new(42)
    }

    fn random_image(shape: Shape, rng: &mut SplitMix64) -> Vec<f32> {
        (0..shape.len())
            .map(|_| (rng.next_f64() * 2.0 - 1.0) as f32)
            .collect()
    }

    #[test]
    fn densenet_ledger_follows_growth_arithmetic() {
        // Default densenet: 5 blocks, block 3 (1-indexed) consumes 768
        // channels at growth 256.
        let cfg = GeneratorConfig::new(TransferKind::Densenet);
        let g = Generator::build("genG", cfg, &mut rng()).unwrap();
        let ledger = g.dense_ledger();
        assert_eq!(ledger.len(), 5);
        assert_eq!(ledger[2], 768);
        for (i, c_in) in ledger.iter().enumerate() {
            assert_eq!(*c_in, 256 * (i + 1));
        }
    }

    #[test]
    fn generator_is_shape_preserving_and_bounded() {
        let cfg = GeneratorConfig {
            image_size: 16,
            base_filters: 4,
            transfer_blocks: 2,
            growth_rate: 16,
            ..GeneratorConfig::new(TransferKind::Resnet)
        };
        let g = Generator::build("genG", cfg, &mut rng()).unwrap();
        let mut tape = Tape::<f32>::new();
        let bind = g.bind(&mut tape);
        let mut r = rng();
        let shape = Shape::new(1, 1, 16, 16);
        let x = tape.leaf(shape, random_image(shape, &mut r)).unwrap();
        let y = g.forward(&mut tape, &bind, x).unwrap();
        assert_eq!(tape.shape(y), shape);
        assert!(tape.values(y).iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn generator_rejects_bad_transfer_kind_string() {
        assert!(TransferKind::parse("unet").is_err());
        assert!(TransferKind::parse("resnet").is_ok());
    }

    #[test]
    fn encoder_decoder_round_trip_shapes() {
        // The same fully convolutional net must preserve S for S in
        // {32, 64, 128}.
        let cfg = GeneratorConfig {
            base_filters: 2,
            transfer_blocks: 1,
            growth_rate: 8,
            ..GeneratorConfig::new(TransferKind::Densenet)
        };
        let g = Generator::build("genG", cfg, &mut rng()).unwrap();
        for s in [32usize, 64, 128] {
            let mut tape = Tape::<f32>::new();
            let bind = g.bind(&mut tape);
            let shape = Shape::new(1, 1, s, s);
            let x = tape.leaf(shape, vec![0.1; shape.len()]).unwrap();
            let y = g.forward(&mut tape, &bind, x).unwrap();
            assert_eq!(tape.shape(y), shape, "size {s}");
        }
    }

    #[test]
    fn resnet_block_with_zero_weights_is_identity() {
        let cfg = GeneratorConfig {
            image_size: 8,
            base_filters: 2,
            transfer_blocks: 1,
            growth_rate: 8,
            ..GeneratorConfig::new(TransferKind::Resnet)
        };
        let mut g = Generator::build("genG", cfg, &mut rng()).unwrap();
        // Zero every transfer conv weight; shift stays zero so H(x) = 0.
        for name in ["genG.res0.c0.weight", "genG.res0.c1.weight"] {
            let t = g.stack.by_name_mut(name).unwrap();
            t.values_mut().fill(0.0);
        }
        let TransferPlan::Resnet(blocks) = &g.plan.transfer else {
            unreachable!()
        };
        let block = blocks[0];
        let mut tape = Tape::<f32>::new();
        let bind = g.bind(&mut tape);
        let shape = Shape::new(1, 8, 4, 4);
        let mut r = rng();
        let xv = random_image(shape, &mut r);
        let x = tape.leaf(shape, xv.clone()).unwrap();
        let y = resnet_block_forward(&mut tape, &bind, &block, x).unwrap();
        assert_eq!(tape.values(y), xv.as_slice());
    }

    #[test]
    fn resnet_block_rejects_channel_mismatch() {
        let cfg = GeneratorConfig {
            image_size: 8,
            base_filters: 2,
            transfer_blocks: 1,
            growth_rate: 8,
            ..GeneratorConfig::new(TransferKind::Resnet)
        };
        let g = Generator::build("genG", cfg, &mut rng()).unwrap();
        let TransferPlan::Resnet(blocks) = &g.plan.transfer else {
            unreachable!()
        };
        let block = blocks[0];
        let mut tape = Tape::<f32>::new();
        let bind = g.bind(&mut tape);
        let x = tape.leaf(Shape::new(1, 3, 4, 4), vec![0.0; 48]).unwrap();
        assert!(resnet_block_forward(&mut tape, &bind, &block, x).is_err());
    }

    #[test]
    fn discriminator_outputs_patch_probabilities() {
        let cfg = DiscriminatorConfig {
            base_filters: 4,
            ..DiscriminatorConfig::new()
        };
        let d = Discriminator::build("dG", cfg, &mut rng()).unwrap();
        let mut tape = Tape::<f32>::new();
        let bind = d.bind(&mut tape);
        let shape = Shape::new(1, 1, 64, 64);
        let mut r = rng();
        let x = tape.leaf(shape, random_image(shape, &mut r)).unwrap();
        let y = d.forward(&mut tape, &bind, x).unwrap();
        let out = tape.shape(y);
        assert_eq!(out.c, 1);
        assert!(out.h > 1 && out.w > 1, "patch map, not a scalar: {out}");
        assert!(tape
            .values(y)
            .iter()
            .all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn desk_scale_discriminator_handles_32px() {
        let cfg = DiscriminatorConfig {
            base_filters: 4,
            ..DiscriminatorConfig::for_image_size(32)
        };
        assert_eq!(cfg.n_layers, 2);
        let d = Discriminator::build("dG", cfg, &mut rng()).unwrap();
        let mut tape = Tape::<f32>::new();
        let bind = d.bind(&mut tape);
        let shape = Shape::new(1, 1, 32, 32);
        let x = tape.leaf(shape, vec![0.5; shape.len()]).unwrap();
        let y = d.forward(&mut tape, &bind, x).unwrap();
        assert!(tape.shape(y).h >= 1);
    }

    #[test]
    fn default_discriminator_receptive_field_is_70() {
        let d = Discriminator::build("dG", DiscriminatorConfig::new(), &mut rng()).unwrap();
        assert_eq!(d.receptive_field(), 70);
    }

    #[test]
    fn classifier_shapes_and_softmax() {
        let cfg = ClassifierConfig::new(8, 64);
        let c = Classifier::build("cls", cfg, &mut rng()).unwrap();
        let mut tape = Tape::<f32>::new();
        let bind = c.bind(&mut tape);
        let shape = Shape::new(1, 1, 64, 64);
        let mut r = rng();
        let x = tape.leaf(shape, random_image(shape, &mut r)).unwrap();
        let out = c.forward(&mut tape, &bind, x).unwrap();
        assert_eq!(tape.shape(out.logits), Shape::new(1, 8, 1, 1));
        // Style layer spatial extent is size/4.
        let style = tape.shape(out.style_layer);
        assert_eq!((style.h, style.w), (16, 16));
        // softmax normalization
        let logits = tape.values(out.logits);
        let m = logits.iter().cloned().fold(f32::MIN, f32::max);
        let s: f32 = logits.iter().map(|z| (z - m).exp()).sum();
        let total: f32 = logits.iter().map(|z| (z - m).exp() / s).sum();
        assert!((total - 1.0).abs() < 1e-5);
    }

    #[test]
    fn classifier_needs_two_classes() {
        assert!(Classifier::build("cls", ClassifierConfig::new(1, 32), &mut rng()).is_err());
    }

    #[test]
    fn every_generator_param_reaches_the_loss() {
        // Backprop a generic seeded loss and require nonzero gradient on
        // every parameter except biases that feed straight into an
        // instance norm (the mean subtraction provably kills those).
        for kind in [TransferKind::Resnet, TransferKind::Densenet] {
            let cfg = GeneratorConfig {
                image_size: 16,
                base_filters: 4,
                transfer_blocks: 2,
                growth_rate: 16,
                ..GeneratorConfig::new(kind)
            };
            let g = Generator::build("genG", cfg, &mut rng()).unwrap();
            let mut tape = Tape::<f32>::new();
            let bind = g.bind(&mut tape);
            let mut r = SplitMix64::new(7);
            let shape = Shape::new(1, 1, 16, 16);
            let x = tape.leaf(shape, random_image(shape, &mut r)).unwrap();
            let y = g.forward(&mut tape, &bind, x).unwrap();
            let loss = tape.reduce_loss(y, LossKind::MeanAbs);
            let mut grads = tape.backward(loss);
            for (idx, p) in g.stack.params().enumerate() {
                let dead_bias = p.name.ends_with(".bias") && !p.name.ends_with("out.bias");
                let grad = grads.take(bind.var(idx)).expect("gradient present");
                let max = grad.iter().fold(0.0f32, |a, v| a.max(v.abs()));
                if dead_bias {
                    assert!(max < 1e-4, "{} should be dead, |g|={max}", p.name);
                } else {
                    assert!(max > 0.0, "{} received zero gradient", p.name);
                }
            }
        }
    }
}
