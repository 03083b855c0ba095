//! The hybrid attention encoder: a channel-token block followed by a
//! time-token block, each `LN(x + DA(x, x, x))` then `LN(f + FFN(f))`.
//!
//! An input epoch is a `C×T×D` tensor. The intra-channel block treats each
//! channel as one token whose embedding is its flattened `T·D` time series,
//! so attention mixes channels. The inter-channel block treats each time
//! slice as one token with a `C·D` embedding, so attention mixes time slices.
//! Both blocks preserve the input shape.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::attention::{
    dot_product_attention, ffn, AttentionParams, AttentionVars, FfnParams, FfnVars, LayerNormParams, LayerNormVars,
};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{take_named, NamedTensors, ParamVisitor};
use crate::rng;
use crate::tensor::{Shape, Tensor};

/// Extents of one epoch tensor: channels × time slices × features per slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct InputDims {
    pub channels: usize,
    pub timesteps: usize,
    pub depth: usize,
}

impl InputDims {
    pub fn new(channels: usize, timesteps: usize, depth: usize) -> Result<Self> {
        if channels == 0 || timesteps == 0 || depth == 0 {
            return Err(Error::InvalidConfig("channels, timesteps and depth must be at least 1"));
        }
        Ok(Self {
            channels,
            timesteps,
            depth,
        })
    }

    pub fn shape(&self) -> Shape {
        Shape::new(&[self.channels, self.timesteps, self.depth]).expect("validated extents")
    }

    /// Embedding width of a channel token.
    pub fn intra_dim(&self) -> usize {
        self.timesteps * self.depth
    }

    /// Embedding width of a time-slice token.
    pub fn inter_dim(&self) -> usize {
        self.channels * self.depth
    }

    pub fn numel(&self) -> usize {
        self.channels * self.timesteps * self.depth
    }

    pub fn check(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.shape() {
            return Err(Error::InputMismatch {
                expected: self.shape(),
                found: input.shape(),
            });
        }
        Ok(())
    }
}

/// One residual attention block followed by one residual feed-forward block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub attn: AttentionParams,
    pub ffn: FfnParams,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
}

impl BlockParams {
    fn init(dim: usize, heads: usize, hidden: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        Ok(Self {
            attn: AttentionParams::init(dim, heads, rng)?,
            ffn: FfnParams::init(dim, hidden, rng)?,
            ln1: LayerNormParams::identity(dim)?,
            ln2: LayerNormParams::identity(dim)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.attn.key_dim()
    }

    fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> BlockVars {
        BlockVars {
            attn: self.attn.bind(tape),
            ffn: self.ffn.bind(tape),
            ln1: self.ln1.bind(tape),
            ln2: self.ln2.bind(tape),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut impl ParamVisitor<'a>) {
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.ffn.visit(&format!("{prefix}.ffn"), f);
        self.ln1.visit(&format!("{prefix}.ln1"), f);
        self.ln2.visit(&format!("{prefix}.ln2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor)) {
        self.attn.visit_mut(&format!("{prefix}.attn"), f);
        self.ffn.visit_mut(&format!("{prefix}.ffn"), f);
        self.ln1.visit_mut(&format!("{prefix}.ln1"), f);
        self.ln2.visit_mut(&format!("{prefix}.ln2"), f);
    }

    fn from_named(named: &mut NamedTensors, prefix: &str) -> Result<Self> {
        let mut take = |name: String| take_named(named, &name).ok_or(Error::MissingTensor(name));
        let mut heads = Vec::new();
        while let Ok(wq) = take(format!("{prefix}.attn.wq.{}", heads.len())) {
            let n = heads.len();
            heads.push(crate::attention::HeadProjection {
                wq,
                bq: take(format!("{prefix}.attn.bq.{n}"))?,
                wk: take(format!("{prefix}.attn.wk.{n}"))?,
                bk: take(format!("{prefix}.attn.bk.{n}"))?,
                wv: take(format!("{prefix}.attn.wv.{n}"))?,
                bv: take(format!("{prefix}.attn.bv.{n}"))?,
            });
        }
        if heads.is_empty() {
            return Err(Error::MissingTensor(format!("{prefix}.attn.wq.0")));
        }
        let attn = AttentionParams::new(
            heads,
            take(format!("{prefix}.attn.wo"))?,
            take(format!("{prefix}.attn.bo"))?,
        )?;
        let ffn = FfnParams::new(
            take(format!("{prefix}.ffn.w1"))?,
            take(format!("{prefix}.ffn.b1"))?,
            take(format!("{prefix}.ffn.w2"))?,
            take(format!("{prefix}.ffn.b2"))?,
        )?;
        if ffn.dim() != attn.key_dim() {
            return Err(Error::InvalidConfig("feed-forward width differs from attention width"));
        }
        let dim = attn.key_dim();
        let mut ln = |which: &str| -> Result<LayerNormParams> {
            let gain = take(format!("{prefix}.{which}.gain"))?;
            let bias = take(format!("{prefix}.{which}.bias"))?;
            crate::attention::expect_dims(&gain, &[dim])?;
            crate::attention::expect_dims(&bias, &[dim])?;
            Ok(LayerNormParams {
                gain,
                bias,
                eps: crate::attention::DEFAULT_LN_EPS,
            })
        };
        let ln1 = ln("ln1")?;
        let ln2 = ln("ln2")?;
        Ok(Self { attn, ffn, ln1, ln2 })
    }
}

pub struct BlockVars {
    pub attn: AttentionVars,
    pub ffn: FfnVars,
    pub ln1: LayerNormVars,
    pub ln2: LayerNormVars,
}

/// Parameters of the full encoder. The two blocks share nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct HassEncoderParams {
    pub dims: InputDims,
    pub intra: BlockParams,
    pub inter: BlockParams,
}

pub struct EncoderVars {
    pub dims: InputDims,
    pub intra: BlockVars,
    pub inter: BlockVars,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub dims: InputDims,
    pub intra_heads: usize,
    pub inter_heads: usize,
    pub intra_hidden: usize,
    pub inter_hidden: usize,
    pub seed: u64,
}

impl EncoderConfig {
    /// Two heads per block where the embedding width allows it (else one) and
    /// a feed-forward width of four times the embedding width.
    pub fn with_defaults(dims: InputDims, seed: u64) -> Self {
        let heads = |d: usize| if d.is_multiple_of(2) { 2 } else { 1 };
        Self {
            dims,
            intra_heads: heads(dims.intra_dim()),
            inter_heads: heads(dims.inter_dim()),
            intra_hidden: 4 * dims.intra_dim(),
            inter_hidden: 4 * dims.inter_dim(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |block, dim: usize, heads: usize| {
            if heads == 0 || !dim.is_multiple_of(heads) {
                Err(Error::HeadDivisibility { block, dim, heads })
            } else {
                Ok(())
            }
        };
        check("intra", self.dims.intra_dim(), self.intra_heads)?;
        check("inter", self.dims.inter_dim(), self.inter_heads)?;
        if self.intra_hidden == 0 || self.inter_hidden == 0 {
            return Err(Error::InvalidConfig("feed-forward width must be at least 1"));
        }
        Ok(())
    }
}

pub const ENCODER_INIT_STREAM: &str = "init.encoder";

/// Glorot-uniform weights, zero biases, identity layer-norm affine; fully
/// determined by `config.seed`.
pub fn init_encoder(config: &EncoderConfig) -> Result<HassEncoderParams> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, ENCODER_INIT_STREAM);
    let d = config.dims;
    let intra = BlockParams::init(d.intra_dim(), config.intra_heads, config.intra_hidden, &mut rng)?;
    let inter = BlockParams::init(d.inter_dim(), config.inter_heads, config.inter_hidden, &mut rng)?;
    Ok(HassEncoderParams { dims: d, intra, inter })
}

impl HassEncoderParams {
    pub fn new(dims: InputDims, intra: BlockParams, inter: BlockParams) -> Result<Self> {
        if intra.dim() != dims.intra_dim() || inter.dim() != dims.inter_dim() {
            return Err(Error::InvalidConfig("block widths do not match the input extents"));
        }
        Ok(Self { dims, intra, inter })
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> EncoderVars {
        EncoderVars {
            dims: self.dims,
            intra: self.intra.bind(tape),
            inter: self.inter.bind(tape),
        }
    }

    /// Visits `enc.intra.*` then `enc.inter.*`, in the same order as [`Self::bind`].
    pub fn visit<'a>(&'a self, f: &mut impl ParamVisitor<'a>) {
        self.intra.visit("enc.intra", f);
        self.inter.visit("enc.inter", f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut Tensor)) {
        self.intra.visit_mut("enc.intra", f);
        self.inter.visit_mut("enc.inter", f);
    }

    pub fn from_named(named: &mut NamedTensors, dims: InputDims) -> Result<Self> {
        let intra = BlockParams::from_named(named, "enc.intra")?;
        let inter = BlockParams::from_named(named, "enc.inter")?;
        Self::new(dims, intra, inter)
    }

    /// Runs the encoder on a single epoch without recording gradients.
    pub fn encode(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.constant(input);
        let y = encode(&mut tape, x, &vars)?;
        Ok(tape.value(y)?.clone())
    }

    pub fn intra_channel_block(&self, input: &Tensor) -> Result<Tensor> {
        self.run_block(input, intra_channel_block)
    }

    pub fn inter_channel_block(&self, input: &Tensor) -> Result<Tensor> {
        self.run_block(input, inter_channel_block)
    }

    fn run_block(
        &self,
        input: &Tensor,
        block: impl Fn(&mut Tape<'_>, Var, &EncoderVars) -> Result<BlockTrace>,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.constant(input);
        let trace = block(&mut tape, x, &vars)?;
        Ok(tape.value(trace.output)?.clone())
    }
}

/// Output of one block plus the attention weights it computed.
pub struct BlockTrace {
    pub output: Var,
    pub attention: Vec<Var>,
}

fn residual_block(tape: &mut Tape<'_>, x: Var, vars: &BlockVars) -> Result<BlockTrace> {
    let attn = dot_product_attention(tape, x, x, x, &vars.attn)?;
    let sum = tape.add(x, attn.output)?;
    let f = vars.ln1.apply(tape, sum)?;
    let ff = ffn(tape, f, &vars.ffn)?;
    let sum = tape.add(f, ff)?;
    let output = vars.ln2.apply(tape, sum)?;
    Ok(BlockTrace {
        output,
        attention: attn.weights,
    })
}

fn check_input(tape: &Tape<'_>, input: Var, dims: InputDims) -> Result<()> {
    dims.check(tape.value(input)?)
}

/// `C×T×D` → `(T·D)×C`: one column per channel.
pub fn to_channel_tokens(tape: &mut Tape<'_>, input: Var, dims: InputDims) -> Result<Var> {
    let rows = tape.reshape(input, &[dims.channels, dims.intra_dim()])?;
    tape.transpose(rows)
}

pub fn from_channel_tokens(tape: &mut Tape<'_>, tokens: Var, dims: InputDims) -> Result<Var> {
    let rows = tape.transpose(tokens)?;
    tape.reshape(rows, &[dims.channels, dims.timesteps, dims.depth])
}

/// `C×T×D` → `(C·D)×T`: one column per time slice.
pub fn to_time_tokens(tape: &mut Tape<'_>, input: Var, dims: InputDims) -> Result<Var> {
    let cdt = tape.transpose(input)?;
    tape.reshape(cdt, &[dims.inter_dim(), dims.timesteps])
}

pub fn from_time_tokens(tape: &mut Tape<'_>, tokens: Var, dims: InputDims) -> Result<Var> {
    let cdt = tape.reshape(tokens, &[dims.channels, dims.depth, dims.timesteps])?;
    tape.transpose(cdt)
}

/// Attention across channels; output has the input's `C×T×D` shape.
pub fn intra_channel_block(tape: &mut Tape<'_>, input: Var, vars: &EncoderVars) -> Result<BlockTrace> {
    check_input(tape, input, vars.dims)?;
    let x = to_channel_tokens(tape, input, vars.dims)?;
    let trace = residual_block(tape, x, &vars.intra)?;
    Ok(BlockTrace {
        output: from_channel_tokens(tape, trace.output, vars.dims)?,
        attention: trace.attention,
    })
}

/// Attention across time slices; output has the input's `C×T×D` shape.
pub fn inter_channel_block(tape: &mut Tape<'_>, input: Var, vars: &EncoderVars) -> Result<BlockTrace> {
    check_input(tape, input, vars.dims)?;
    let x = to_time_tokens(tape, input, vars.dims)?;
    let trace = residual_block(tape, x, &vars.inter)?;
    Ok(BlockTrace {
        output: from_time_tokens(tape, trace.output, vars.dims)?,
        attention: trace.attention,
    })
}

pub fn encode(tape: &mut Tape<'_>, input: Var, vars: &EncoderVars) -> Result<Var> {
    let spatial = intra_channel_block(tape, input, vars)?;
    Ok(inter_channel_block(tape, spatial.output, vars)?.output)
}
