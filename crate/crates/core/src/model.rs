//! Encoder + classifier composition, loss and prediction.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{self, Tape, Var};
use crate::encoder::{self, EncoderConfig, EncoderVars, HassEncoderParams, InputDims};
use crate::error::{Error, Result};
use crate::params::{take_named, NamedTensors, ParamVisitor};
use crate::rng::{self, glorot_uniform};
use crate::stage::{argmax_stage, SleepStage};
use crate::synth::EpochRecord;
use crate::tensor::Tensor;

pub const HEAD_INIT_STREAM: &str = "init.head";
pub const DEFAULT_CONV_KERNEL: usize = 5;
pub const DEFAULT_CONV_FILTERS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Linear,
    TinyConv { kernel: usize, filters: usize },
}

impl HeadKind {
    pub fn tiny_conv() -> Self {
        Self::TinyConv {
            kernel: DEFAULT_CONV_KERNEL,
            filters: DEFAULT_CONV_FILTERS,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::TinyConv { .. } => "tinyconv",
        }
    }
}

/// Classifier mapping one (possibly encoded) epoch to five stage logits.
#[derive(Clone, Debug, PartialEq)]
pub enum ClassifierParams {
    /// Dense map from the flattened `C·T·D` epoch.
    Linear { w: Tensor, b: Tensor },
    /// 1-D convolution over time with all `C·D` rows as input channels,
    /// rectifier, global average pool over time, dense map to the stages.
    TinyConv {
        kernel: usize,
        conv_w: Tensor,
        conv_b: Tensor,
        out_w: Tensor,
        out_b: Tensor,
    },
}

impl ClassifierParams {
    pub fn init(kind: HeadKind, dims: InputDims, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, HEAD_INIT_STREAM);
        let k = SleepStage::COUNT;
        match kind {
            HeadKind::Linear => Ok(Self::Linear {
                w: glorot_uniform(k, dims.numel(), &mut rng)?,
                b: Tensor::zeros(&[k])?,
            }),
            HeadKind::TinyConv { kernel, filters } => {
                if kernel == 0 || kernel > dims.timesteps {
                    return Err(Error::InvalidConfig("convolution kernel must be between 1 and T"));
                }
                if filters == 0 {
                    return Err(Error::InvalidConfig("convolution needs at least one filter"));
                }
                Ok(Self::TinyConv {
                    kernel,
                    conv_w: glorot_uniform(filters, dims.inter_dim() * kernel, &mut rng)?,
                    conv_b: Tensor::zeros(&[filters])?,
                    out_w: glorot_uniform(k, filters, &mut rng)?,
                    out_b: Tensor::zeros(&[k])?,
                })
            }
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Self::Linear { .. } => HeadKind::Linear,
            Self::TinyConv { kernel, conv_w, .. } => HeadKind::TinyConv {
                kernel: *kernel,
                filters: conv_w.dims()[0],
            },
        }
    }

    fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> HeadVars {
        match self {
            Self::Linear { w, b } => HeadVars::Linear {
                w: tape.leaf(w),
                b: tape.leaf(b),
            },
            Self::TinyConv {
                kernel,
                conv_w,
                conv_b,
                out_w,
                out_b,
            } => HeadVars::TinyConv {
                kernel: *kernel,
                conv_w: tape.leaf(conv_w),
                conv_b: tape.leaf(conv_b),
                out_w: tape.leaf(out_w),
                out_b: tape.leaf(out_b),
            },
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl ParamVisitor<'a>) {
        match self {
            Self::Linear { w, b } => {
                f.visit(String::from("head.w"), w);
                f.visit(String::from("head.b"), b);
            }
            Self::TinyConv {
                conv_w,
                conv_b,
                out_w,
                out_b,
                ..
            } => {
                f.visit(String::from("head.conv.w"), conv_w);
                f.visit(String::from("head.conv.b"), conv_b);
                f.visit(String::from("head.out.w"), out_w);
                f.visit(String::from("head.out.b"), out_b);
            }
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut Tensor)) {
        match self {
            Self::Linear { w, b } => {
                f(String::from("head.w"), w);
                f(String::from("head.b"), b);
            }
            Self::TinyConv {
                conv_w,
                conv_b,
                out_w,
                out_b,
                ..
            } => {
                f(String::from("head.conv.w"), conv_w);
                f(String::from("head.conv.b"), conv_b);
                f(String::from("head.out.w"), out_w);
                f(String::from("head.out.b"), out_b);
            }
        }
    }

    fn from_named(named: &mut NamedTensors, dims: InputDims) -> Result<Self> {
        let k = SleepStage::COUNT;
        if let Some(w) = take_named(named, "head.w") {
            let b = take_named(named, "head.b").ok_or_else(|| missing("head.b"))?;
            crate::attention::expect_dims(&w, &[k, dims.numel()])?;
            crate::attention::expect_dims(&b, &[k])?;
            return Ok(Self::Linear { w, b });
        }
        let conv_w = take_named(named, "head.conv.w").ok_or_else(|| missing("head.w"))?;
        let conv_b = take_named(named, "head.conv.b").ok_or_else(|| missing("head.conv.b"))?;
        let out_w = take_named(named, "head.out.w").ok_or_else(|| missing("head.out.w"))?;
        let out_b = take_named(named, "head.out.b").ok_or_else(|| missing("head.out.b"))?;
        let (filters, width) = conv_w
            .shape()
            .as_matrix()
            .ok_or(Error::InvalidShape("head.conv.w must be a matrix"))?;
        let cd = dims.inter_dim();
        if width % cd != 0 || width / cd == 0 || width / cd > dims.timesteps {
            return Err(Error::InvalidConfig(
                "head.conv.w width does not match the input extents",
            ));
        }
        crate::attention::expect_dims(&conv_b, &[filters])?;
        crate::attention::expect_dims(&out_w, &[k, filters])?;
        crate::attention::expect_dims(&out_b, &[k])?;
        Ok(Self::TinyConv {
            kernel: width / cd,
            conv_w,
            conv_b,
            out_w,
            out_b,
        })
    }
}

fn missing(name: &str) -> Error {
    Error::MissingTensor(String::from(name))
}

enum HeadVars {
    Linear {
        w: Var,
        b: Var,
    },
    TinyConv {
        kernel: usize,
        conv_w: Var,
        conv_b: Var,
        out_w: Var,
        out_b: Var,
    },
}

/// Optional encoder in front of a classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub dims: InputDims,
    pub encoder: Option<HassEncoderParams>,
    pub head: ClassifierParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub dims: InputDims,
    pub use_hass: bool,
    pub head: HeadKind,
    /// Heads per attention block; `None` picks two where divisible, else one.
    pub heads: Option<usize>,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(dims: InputDims, use_hass: bool, head: HeadKind, seed: u64) -> Self {
        Self {
            dims,
            use_hass,
            head,
            heads: None,
            seed,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        let mut cfg = EncoderConfig::with_defaults(self.dims, self.seed);
        if let Some(m) = self.heads {
            cfg.intra_heads = m;
            cfg.inter_heads = m;
        }
        cfg
    }
}

/// Graph handles for a bound [`Model`].
pub struct ModelVars {
    encoder: Option<EncoderVars>,
    head: HeadVars,
    dims: InputDims,
}

impl Model {
    pub fn init(config: &ModelConfig) -> Result<Self> {
        let encoder = if config.use_hass {
            Some(encoder::init_encoder(&config.encoder_config())?)
        } else {
            None
        };
        Ok(Self {
            dims: config.dims,
            encoder,
            head: ClassifierParams::init(config.head, config.dims, config.seed)?,
        })
    }

    pub fn uses_hass(&self) -> bool {
        self.encoder.is_some()
    }

    /// Registers every parameter as a tracked leaf, in [`Self::visit`] order.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> ModelVars {
        ModelVars {
            encoder: self.encoder.as_ref().map(|e| e.bind(tape)),
            head: self.head.bind(tape),
            dims: self.dims,
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl ParamVisitor<'a>) {
        if let Some(e) = &self.encoder {
            e.visit(f);
        }
        self.head.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut Tensor)) {
        if let Some(e) = &mut self.encoder {
            e.visit_mut(f);
        }
        self.head.visit_mut(f);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_: String, t: &Tensor| n += t.numel());
        n
    }

    /// Flat named tensors, prefixed by a `meta.dims` vector holding `[C, T, D]`.
    pub fn to_named(&self) -> NamedTensors {
        let d = self.dims;
        let meta = Tensor::vector(vec![d.channels as f64, d.timesteps as f64, d.depth as f64]).expect("three elements");
        let mut named = vec![(String::from("meta.dims"), meta)];
        self.visit(&mut |name: String, t: &Tensor| named.push((name, t.clone())));
        named
    }

    pub fn from_named(mut named: NamedTensors) -> Result<Self> {
        let meta = take_named(&mut named, "meta.dims").ok_or_else(|| missing("meta.dims"))?;
        let dims = match meta.data() {
            &[c, t, d] if [c, t, d].iter().all(|v| *v >= 1.0 && libm::trunc(*v) == *v && *v < 1e9) => {
                InputDims::new(c as usize, t as usize, d as usize)?
            }
            _ => return Err(Error::InvalidConfig("meta.dims must hold three positive integers")),
        };
        let encoder = if named.iter().any(|(n, _)| n.starts_with("enc.")) {
            Some(HassEncoderParams::from_named(&mut named, dims)?)
        } else {
            None
        };
        let head = ClassifierParams::from_named(&mut named, dims)?;
        if let Some((name, _)) = named.into_iter().next() {
            return Err(Error::UnexpectedTensor(name));
        }
        Ok(Self { dims, encoder, head })
    }

    /// Logits for one epoch, as a `1×5` row.
    pub fn forward(&self, tape: &mut Tape<'_>, input: Var, vars: &ModelVars) -> Result<Var> {
        forward_classify(tape, input, vars)
    }

    pub fn logits(&self, input: &Tensor) -> Result<[f64; SleepStage::COUNT]> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.constant(input);
        let y = forward_classify(&mut tape, x, &vars)?;
        let mut out = [0.0; SleepStage::COUNT];
        out.copy_from_slice(tape.value(y)?.data());
        Ok(out)
    }

    pub fn predict_one(&self, input: &Tensor) -> Result<SleepStage> {
        Ok(argmax_stage(&self.logits(input)?))
    }

    /// Arg-max stage per record, ties toward the lower stage code.
    pub fn predict(&self, records: &[EpochRecord]) -> Result<Vec<SleepStage>> {
        records.iter().map(|r| self.predict_one(&r.signal)).collect()
    }
}

/// `head(encode(I))` when an encoder is bound, else `head(I)`; returns a `1×5` row.
pub fn forward_classify(tape: &mut Tape<'_>, input: Var, vars: &ModelVars) -> Result<Var> {
    vars.dims.check(tape.value(input)?)?;
    let features = match &vars.encoder {
        Some(enc) => encoder::encode(tape, input, enc)?,
        None => input,
    };
    let k = SleepStage::COUNT;
    let logits = match vars.head {
        HeadVars::Linear { w, b } => {
            let flat = tape.reshape(features, &[vars.dims.numel(), 1])?;
            let z = tape.matmul(w, flat)?;
            tape.add_bias(z, b)?
        }
        HeadVars::TinyConv {
            kernel,
            conv_w,
            conv_b,
            out_w,
            out_b,
        } => {
            let rows = encoder::to_time_tokens(tape, features, vars.dims)?;
            let windows = tape.im2col(rows, kernel)?;
            let h = tape.matmul(conv_w, windows)?;
            let h = tape.add_bias(h, conv_b)?;
            let h = tape.relu(h)?;
            let len = vars.dims.timesteps - kernel + 1;
            let pool = tape.constant_owned(Tensor::filled(&[len, 1], 1.0 / len as f64)?);
            let pooled = tape.matmul(h, pool)?;
            let z = tape.matmul(out_w, pooled)?;
            tape.add_bias(z, out_b)?
        }
    };
    tape.reshape(logits, &[1, k])
}

/// Mean over the batch of `-log softmax(logits_b)[label_b]`.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[SleepStage]) -> Result<f64> {
    let (b, k) = logits.shape().as_matrix().ok_or(Error::RankMismatch {
        op: "cross_entropy",
        expected: 2,
        found: logits.shape(),
    })?;
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != b || k != SleepStage::COUNT {
        return Err(Error::LabelCount {
            labels: labels.len(),
            batch: b,
        });
    }
    let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    Ok(autodiff::cross_entropy_forward(logits, &idx).0)
}

/// Records one batch on `tape` and returns the mean cross-entropy node along
/// with the `B×5` logits node.
pub fn batch_loss(tape: &mut Tape<'_>, vars: &ModelVars, inputs: &[Var], labels: &[SleepStage]) -> Result<(Var, Var)> {
    if inputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let rows = inputs
        .iter()
        .map(|&x| forward_classify(tape, x, vars))
        .collect::<Result<Vec<_>>>()?;
    let logits = tape.concat_rows(&rows)?;
    let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let loss = tape.cross_entropy(logits, &idx)?;
    Ok((loss, logits))
}

/// Human-readable name for a model variant, e.g. `tinyconv+hass`.
pub fn variant_name(model: &Model) -> String {
    let head = model.head.kind().name();
    if model.uses_hass() {
        format!("{head}+hass")
    } else {
        String::from(head)
    }
}
