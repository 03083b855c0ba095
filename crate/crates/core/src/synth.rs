//! Seeded synthetic EEG epochs with tunable temporal and spatial class structure.
//!
//! For a record of class `k` the signal on channel `c` at sample `t` is
//!
//! ```text
//! temporal · sin(2π f_k t / T + φ_k) + spatial · u_k[c] · z(t) + noise · n(c, t)
//! ```
//!
//! where `f_k = 2(k + 1)` cycles per epoch, `u_k` is a fixed class loading
//! vector over channels (norm `√C`), `z` is a per-record white source shared
//! by all channels and `n` is independent white noise. The template is
//! visible in each channel on its own; the rank-1 loading only shows up in how
//! channels co-vary. Class templates and loadings depend only on `C`, never on
//! the record seed, so files generated with different seeds share classes.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, standard_normal};
use crate::stage::SleepStage;
use crate::tensor::Tensor;

const CLASS_STRUCTURE_SEED: u64 = 0x4845_4547;
const CLASS_STRUCTURE_STREAM: &str = "synth.classes";

/// One pre-epoched recording segment: `C×T×1` signal and its stage label.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub signal: Tensor,
    pub label: SleepStage,
}

impl EpochRecord {
    pub fn new(signal: Tensor, label: SleepStage) -> Result<Self> {
        match signal.dims() {
            [_, _, 1] if signal.is_finite() => Ok(Self { signal, label }),
            [_, _, 1] => Err(Error::InvalidConfig("signal must be finite")),
            _ => Err(Error::InvalidShape("epoch signal must be C×T×1")),
        }
    }

    pub fn channels(&self) -> usize {
        self.signal.dims()[0]
    }

    pub fn timesteps(&self) -> usize {
        self.signal.dims()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub channels: usize,
    pub timesteps: usize,
    pub n_records: usize,
    pub seed: u64,
    pub class_balance: [f64; SleepStage::COUNT],
    pub spatial_coupling: f64,
    pub temporal_signature: f64,
    pub noise_std: f64,
}

impl SynthSpec {
    pub fn new(channels: usize, timesteps: usize, n_records: usize, seed: u64) -> Self {
        Self {
            channels,
            timesteps,
            n_records,
            seed,
            class_balance: [0.2; SleepStage::COUNT],
            spatial_coupling: 1.0,
            temporal_signature: 1.0,
            noise_std: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.timesteps == 0 {
            return Err(Error::InvalidConfig("channels and timesteps must be at least 1"));
        }
        if self.channels > u16::MAX as usize || self.timesteps > u32::MAX as usize {
            return Err(Error::InvalidConfig(
                "channels or timesteps exceed the file format range",
            ));
        }
        if self.class_balance.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidConfig("class balance entries must be non-negative"));
        }
        let total: f64 = self.class_balance.iter().sum();
        if libm::fabs(total - 1.0) > 1e-9 {
            return Err(Error::InvalidConfig("class balance must sum to 1"));
        }
        let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !unit(self.spatial_coupling) || !unit(self.temporal_signature) {
            return Err(Error::InvalidConfig(
                "spatial coupling and temporal signature must lie in [0, 1]",
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidConfig("noise std must be finite and non-negative"));
        }
        Ok(())
    }
}

struct ClassStructure {
    phase: f64,
    loading: Vec<f64>,
}

fn class_structures(channels: usize) -> Vec<ClassStructure> {
    let mut rng = rng::stream(CLASS_STRUCTURE_SEED, CLASS_STRUCTURE_STREAM);
    (0..SleepStage::COUNT)
        .map(|_| {
            let phase = rng.gen_range(0.0..core::f64::consts::TAU);
            let mut loading: Vec<f64> = (0..channels).map(|_| standard_normal(&mut rng)).collect();
            let norm = libm::sqrt(loading.iter().map(|v| v * v).sum::<f64>());
            let scale = if norm > 0.0 {
                libm::sqrt(channels as f64) / norm
            } else {
                0.0
            };
            loading.iter_mut().for_each(|v| *v *= scale);
            ClassStructure { phase, loading }
        })
        .collect()
}

/// Cycles per epoch of the class template for `stage`.
pub fn class_frequency(stage: SleepStage) -> f64 {
    2.0 * (stage.index() + 1) as f64
}

fn draw_label(balance: &[f64; SleepStage::COUNT], rng: &mut impl Rng) -> SleepStage {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = SleepStage::W;
    for (stage, &p) in SleepStage::ALL.iter().zip(balance) {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = *stage;
        if u < acc {
            return *stage;
        }
    }
    last
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<EpochRecord>> {
    spec.validate()?;
    let (c, t) = (spec.channels, spec.timesteps);
    let classes = class_structures(c);
    let mut rng = rng::stream(spec.seed, rng::SYNTH_STREAM);
    let mut records = Vec::with_capacity(spec.n_records);
    let mut source = alloc::vec![0.0; t];
    for _ in 0..spec.n_records {
        let label = draw_label(&spec.class_balance, &mut rng);
        let class = &classes[label.index()];
        let freq = class_frequency(label);
        for z in source.iter_mut() {
            *z = standard_normal(&mut rng);
        }
        let mut data = Vec::with_capacity(c * t);
        for ch in 0..c {
            for (ti, z) in source.iter().enumerate() {
                let angle = core::f64::consts::TAU * freq * ti as f64 / t as f64 + class.phase;
                let v = spec.temporal_signature * libm::sin(angle)
                    + spec.spatial_coupling * class.loading[ch] * z
                    + spec.noise_std * standard_normal(&mut rng);
                data.push(v);
            }
        }
        records.push(EpochRecord {
            signal: Tensor::new(&[c, t, 1], data)?,
            label,
        });
    }
    Ok(records)
}

/// Per-stage record counts.
pub fn class_histogram(records: &[EpochRecord]) -> [usize; SleepStage::COUNT] {
    let mut h = [0; SleepStage::COUNT];
    for r in records {
        h[r.label.index()] += 1;
    }
    h
}
