//! The super-resolution network.
//!
//! Wiring, bottom to top:
//!
//! * **Channel attention** ([`CaUnit`]): global average pool to one value
//!   per channel, a squeeze/excite pair of 1x1 convs with ReLU between,
//!   sigmoid, then per-channel rescaling of the input.
//! * **Spatial attention** ([`SaUnit`]): 1x1 conv expanding the channels,
//!   ReLU, 1x1 conv collapsing to a single map, sigmoid, then per-pixel
//!   rescaling of the input.
//! * **Residual block** ([`CsarBlock`]): `U = conv3x3(relu(conv3x3(h)))`,
//!   then `h + modulate(U)` where `modulate` depends on the variant: the
//!   identity (base), one attention unit (channel-only / spatial-only), or
//!   both units concatenated and fused by a 1x1 conv.
//! * **Memory module** ([`FmmModule`]): a chain of blocks, then a 1x1
//!   "gate" conv over the concatenation of the chain output with every
//!   previous module's output (the long-term connections). Module `m`
//!   (1-based) therefore fuses `m * channels` input channels down to
//!   `channels`.
//! * **Network** ([`CsfmNetwork`]): head conv (3 -> C), an entry conv
//!   producing the first module input, M memory modules, a transition conv
//!   plus global residual back to the head features, a sub-pixel upsampler,
//!   and an output conv (C -> 3).

mod config;
mod layers;

pub use config::{BlockVariant, CsfmConfig};
pub use layers::{conv_scalars, Conv, Initializer};

use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, pixel_shuffle, relu, sigmoid};
use crate::tensor::{add, concat_channels, mul, Scalar, Tape, Tensor};

/// Channel attention: rescales each channel by a learned gate in (0,1).
pub struct CaUnit<S: Scalar> {
    squeeze: Conv<S>,
    excite: Conv<S>,
}

impl<S: Scalar> CaUnit<S> {
    fn new(name: &str, channels: usize, reduction: usize, init: &mut Initializer) -> Self {
        let mid = channels / reduction;
        CaUnit {
            squeeze: Conv::new(format!("{name}.squeeze"), channels, mid, 1, 0, init),
            excite: Conv::new(format!("{name}.excite"), mid, channels, 1, 0, init),
        }
    }

    /// `u * sigmoid(excite(relu(squeeze(avg_pool(u)))))`, channel-broadcast.
    pub fn forward(&self, tape: &mut Tape<S>, u: &Tensor<S>) -> Result<Tensor<S>> {
        let z = global_avg_pool(tape, u);
        let h = self.squeeze.forward(tape, &z)?;
        let h = relu(tape, &h);
        let h = self.excite.forward(tape, &h)?;
        let alpha = sigmoid(tape, &h);
        mul(tape, u, &alpha)
    }

    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor<S>)) {
        self.squeeze.visit(f);
        self.excite.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        self.squeeze.visit_mut(f);
        self.excite.visit_mut(f);
    }
}

/// Spatial attention: rescales each pixel by a learned mask in (0,1).
pub struct SaUnit<S: Scalar> {
    expand: Conv<S>,
    collapse: Conv<S>,
}

impl<S: Scalar> SaUnit<S> {
    fn new(name: &str, channels: usize, expansion: usize, init: &mut Initializer) -> Self {
        SaUnit {
            expand: Conv::new(
                format!("{name}.expand"),
                channels,
                channels * expansion,
                1,
                0,
                init,
            ),
            collapse: Conv::new(
                format!("{name}.collapse"),
                channels * expansion,
                1,
                1,
                0,
                init,
            ),
        }
    }

    /// `u * sigmoid(collapse(relu(expand(u))))`, spatial-broadcast.
    pub fn forward(&self, tape: &mut Tape<S>, u: &Tensor<S>) -> Result<Tensor<S>> {
        let h = self.expand.forward(tape, u)?;
        let h = relu(tape, &h);
        let h = self.collapse.forward(tape, &h)?;
        let beta = sigmoid(tape, &h);
        mul(tape, u, &beta)
    }

    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor<S>)) {
        self.expand.visit(f);
        self.collapse.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        self.expand.visit_mut(f);
        self.collapse.visit_mut(f);
    }
}

/// The variant-specific modulation applied to a block's residual branch.
enum Modulation<S: Scalar> {
    /// Plain residual block: the branch passes through unchanged.
    Identity,
    /// Channel attention only.
    Channel(CaUnit<S>),
    /// Spatial attention only.
    Spatial(SaUnit<S>),
    /// Both attentions, concatenated and merged by a 1x1 conv (2C -> C).
    Fused {
        ca: CaUnit<S>,
        sa: SaUnit<S>,
        fuse: Conv<S>,
    },
}

/// Residual block with optional attention modulation.
pub struct CsarBlock<S: Scalar> {
    res1: Conv<S>,
    res2: Conv<S>,
    modulation: Modulation<S>,
}

impl<S: Scalar> CsarBlock<S> {
    fn new(name: &str, cfg: &CsfmConfig, init: &mut Initializer) -> Self {
        let c = cfg.channels;
        let res1 = Conv::new(format!("{name}.res1"), c, c, 3, 1, init);
        let res2 = Conv::new(format!("{name}.res2"), c, c, 3, 1, init);
        let modulation = match cfg.variant {
            BlockVariant::Base => Modulation::Identity,
            BlockVariant::Channel => {
                Modulation::Channel(CaUnit::new(&format!("{name}.ca"), c, cfg.reduction, init))
            }
            BlockVariant::Spatial => {
                Modulation::Spatial(SaUnit::new(&format!("{name}.sa"), c, cfg.expansion, init))
            }
            BlockVariant::Fused => Modulation::Fused {
                ca: CaUnit::new(&format!("{name}.ca"), c, cfg.reduction, init),
                sa: SaUnit::new(&format!("{name}.sa"), c, cfg.expansion, init),
                fuse: Conv::new(format!("{name}.fuse"), 2 * c, c, 1, 0, init),
            },
        };
        CsarBlock {
            res1,
            res2,
            modulation,
        }
    }

    /// `h + modulate(conv3x3(relu(conv3x3(h))))`; spatial size preserved.
    pub fn forward(&self, tape: &mut Tape<S>, h: &Tensor<S>) -> Result<Tensor<S>> {
        let u = self.res1.forward(tape, h)?;
        let u = relu(tape, &u);
        let u = self.res2.forward(tape, &u)?;
        let modulated = match &self.modulation {
            Modulation::Identity => u,
            Modulation::Channel(ca) => ca.forward(tape, &u)?,
            Modulation::Spatial(sa) => sa.forward(tape, &u)?,
            Modulation::Fused { ca, sa, fuse } => {
                let a = ca.forward(tape, &u)?;
                let b = sa.forward(tape, &u)?;
                let cat = concat_channels(tape, &a, &b)?;
                fuse.forward(tape, &cat)?
            }
        };
        add(tape, h, &modulated)
    }

    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor<S>)) {
        self.res1.visit(f);
        self.res2.visit(f);
        match &self.modulation {
            Modulation::Identity => {}
            Modulation::Channel(ca) => ca.visit(f),
            Modulation::Spatial(sa) => sa.visit(f),
            Modulation::Fused { ca, sa, fuse } => {
                ca.visit(f);
                sa.visit(f);
                fuse.visit(f);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        self.res1.visit_mut(f);
        self.res2.visit_mut(f);
        match &mut self.modulation {
            Modulation::Identity => {}
            Modulation::Channel(ca) => ca.visit_mut(f),
            Modulation::Spatial(sa) => sa.visit_mut(f),
            Modulation::Fused { ca, sa, fuse } => {
                ca.visit_mut(f);
                sa.visit_mut(f);
                fuse.visit_mut(f);
            }
        }
    }
}

/// A memory module: `blocks` residual blocks in sequence, then a gate conv
/// fusing the chain output with the outputs of all previous modules.
pub struct FmmModule<S: Scalar> {
    /// 1-based position in the module chain; sizes the gate input.
    index: usize,
    blocks: Vec<CsarBlock<S>>,
    gate: Conv<S>,
}

impl<S: Scalar> FmmModule<S> {
    fn new(index: usize, cfg: &CsfmConfig, init: &mut Initializer) -> Self {
        let name = format!("modules.{}", index - 1);
        let blocks = (0..cfg.blocks)
            .map(|b| CsarBlock::new(&format!("{name}.blocks.{b}"), cfg, init))
            .collect();
        let gate = Conv::new(
            format!("{name}.gate"),
            index * cfg.channels,
            cfg.channels,
            1,
            0,
            init,
        );
        FmmModule {
            index,
            blocks,
            gate,
        }
    }

    /// Runs the block chain on `p_prev`, concatenates the chain output with
    /// `history` (the previous modules' outputs, oldest first, chain output
    /// leading), and applies the gate conv. `history.len()` must be
    /// `index - 1`.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        p_prev: &Tensor<S>,
        history: &[Tensor<S>],
    ) -> Result<Tensor<S>> {
        if history.len() + 1 != self.index {
            return Err(Error::shape(
                "fmm_forward",
                format!(
                    "module {} expects {} history entries, got {}",
                    self.index,
                    self.index - 1,
                    history.len()
                ),
            ));
        }
        let mut h = p_prev.clone();
        for block in &self.blocks {
            h = block.forward(tape, &h)?;
        }
        let mut cat = h;
        for p in history {
            cat = concat_channels(tape, &cat, p)?;
        }
        self.gate.forward(tape, &cat)
    }

    /// The gate conv's weights (used by the weight-norm analysis tests).
    pub fn gate(&self) -> &Conv<S> {
        &self.gate
    }

    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor<S>)) {
        for b in &self.blocks {
            b.visit(f);
        }
        self.gate.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.gate.visit_mut(f);
    }
}

/// The full network; see the module docs for the dataflow.
pub struct CsfmNetwork<S: Scalar> {
    config: CsfmConfig,
    /// 3 -> C feature head.
    head: Conv<S>,
    /// C -> C conv producing the first module input.
    entry: Conv<S>,
    modules: Vec<FmmModule<S>>,
    /// C -> C conv after the module chain, before the global residual.
    transition: Conv<S>,
    /// (conv, shuffle factor) pairs of the sub-pixel upsampler.
    upsample: Vec<(Conv<S>, usize)>,
    /// C -> 3 reconstruction conv.
    output: Conv<S>,
}

impl<S: Scalar> CsfmNetwork<S> {
    /// Builds a network; parameters come from `init` in a fixed traversal
    /// order, so a seeded initializer yields identical weights every time.
    pub fn new(config: CsfmConfig, init: &mut Initializer) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let head = Conv::new("head", 3, c, 3, 1, init);
        let entry = Conv::new("entry", c, c, 3, 1, init);
        let modules = (1..=config.modules)
            .map(|m| FmmModule::new(m, &config, init))
            .collect();
        let transition = Conv::new("transition", c, c, 3, 1, init);
        let upsample = config
            .upsample_stages()
            .iter()
            .enumerate()
            .map(|(i, &(mult, s))| {
                (
                    Conv::new(format!("upsample.{i}"), c, c * mult, 3, 1, init),
                    s,
                )
            })
            .collect();
        let output = Conv::new("output", c, 3, 3, 1, init);
        let net = CsfmNetwork {
            config,
            head,
            entry,
            modules,
            transition,
            upsample,
            output,
        };
        debug_assert!(net.names_are_unique());
        Ok(net)
    }

    pub fn config(&self) -> &CsfmConfig {
        &self.config
    }

    pub fn modules(&self) -> &[FmmModule<S>] {
        &self.modules
    }

    /// Super-resolves a mean-subtracted RGB batch `(n, 3, h, w)` to
    /// `(n, 3, s*h, s*w)`.
    pub fn forward(&self, tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.shape().c != 3 {
            return Err(Error::shape(
                "csfm_forward",
                format!("input must have 3 channels, got shape {}", x.shape()),
            ));
        }
        let f_head = self.head.forward(tape, x)?;
        let mut p = self.entry.forward(tape, &f_head)?;
        let mut history: Vec<Tensor<S>> = Vec::with_capacity(self.modules.len());
        for module in &self.modules {
            p = module.forward(tape, &p, &history)?;
            history.push(p.clone());
        }
        let t = self.transition.forward(tape, &p)?;
        let mut u = add(tape, &t, &f_head)?;
        for (conv, s) in &self.upsample {
            let expanded = conv.forward(tape, &u)?;
            u = pixel_shuffle(tape, &expanded, *s)?;
        }
        self.output.forward(tape, &u)
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn watch(&self, tape: &mut Tape<S>) {
        self.for_each_param(&mut |_, t| tape.watch(t));
    }

    /// Visits `(name, tensor)` for every parameter in a fixed order
    /// (construction order, weight before bias).
    pub fn for_each_param<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor<S>)) {
        self.head.visit(f);
        self.entry.visit(f);
        for m in &self.modules {
            m.visit(f);
        }
        self.transition.visit(f);
        for (conv, _) in &self.upsample {
            conv.visit(f);
        }
        self.output.visit(f);
    }

    /// Mutable parameter visit, same order as [`CsfmNetwork::for_each_param`].
    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        self.head.visit_mut(f);
        self.entry.visit_mut(f);
        for m in &mut self.modules {
            m.visit_mut(f);
        }
        self.transition.visit_mut(f);
        for (conv, _) in &mut self.upsample {
            conv.visit_mut(f);
        }
        self.output.visit_mut(f);
    }

    /// Total number of parameter scalars actually held by this instance.
    pub fn num_scalars(&self) -> usize {
        let mut total = 0;
        self.for_each_param(&mut |_, t| total += t.numel());
        total
    }

    /// Parameter names in traversal order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each_param(&mut |name, _| names.push(name.to_string()));
        names
    }

    fn names_are_unique(&self) -> bool {
        let names = self.param_names();
        let set: std::collections::HashSet<&String> = names.iter().collect();
        set.len() == names.len()
    }

    /// Element-type conversion of all parameters (for wide-precision
    /// gradient checks): returns the same architecture with every tensor
    /// converted.
    pub fn convert<T: Scalar>(&self) -> Result<CsfmNetwork<T>> {
        let mut wide = CsfmNetwork::<T>::new(self.config, &mut Initializer::Zeros)?;
        let mut values: Vec<Tensor<T>> = Vec::new();
        self.for_each_param(&mut |_, t| values.push(t.convert::<T>()));
        let mut it = values.into_iter();
        wide.for_each_param_mut(&mut |_, t| {
            *t = it.next().expect("identical architectures have equal parameter counts");
        });
        Ok(wide)
    }
}

/// Analytic scalar count of a single residual block under `config`
/// (residual convs plus the variant's attention/fusion convs).
pub fn count_block_params(config: &CsfmConfig) -> usize {
    let c = config.channels;
    let residual = 2 * conv_scalars(c, c, 3);
    let ca = conv_scalars(c, config.squeezed(), 1) + conv_scalars(config.squeezed(), c, 1);
    let sa = conv_scalars(c, config.expanded(), 1) + conv_scalars(config.expanded(), 1, 1);
    let fuse = conv_scalars(2 * c, c, 1);
    residual
        + match config.variant {
            BlockVariant::Base => 0,
            BlockVariant::Channel => ca,
            BlockVariant::Spatial => sa,
            BlockVariant::Fused => ca + sa + fuse,
        }
}

/// Analytic parameter count of a network built from `config`, without
/// constructing it. Must equal [`CsfmNetwork::num_scalars`] and the scalar
/// count a checkpoint serializes.
pub fn count_params(config: &CsfmConfig) -> usize {
    let c = config.channels;
    let block = count_block_params(config);
    let gates: usize = (1..=config.modules)
        .map(|m| conv_scalars(m * c, c, 1))
        .sum();
    let upsample: usize = config
        .upsample_stages()
        .iter()
        .map(|&(mult, _)| conv_scalars(c, c * mult, 3))
        .sum();
    conv_scalars(3, c, 3)                      // head
        + conv_scalars(c, c, 3)                // entry
        + config.modules * config.blocks * block
        + gates
        + conv_scalars(c, c, 3)                // transition
        + upsample
        + conv_scalars(c, 3, 3)                // output
}
