//! Mini-batch cross-entropy training with SGD or Adam.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{batch_loss, Model};
use crate::rng;
use crate::stage::{argmax_stage, SleepStage};
use crate::synth::EpochRecord;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1"));
        }
        // Zero is accepted: it leaves parameters untouched, which is useful for checks.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig("learning rate must be finite and non-negative"));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps.is_finite() && eps > 0.0) {
                return Err(Error::InvalidConfig("Adam needs betas in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Sample-weighted mean batch loss over the epoch.
    pub loss: f64,
    /// Fraction of records classified correctly by the pre-update model of each batch.
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    beta1_pow: f64,
    beta2_pow: f64,
}

/// Gradient of the mean batch loss for every parameter, in [`Model::visit`] order.
pub fn batch_gradients(model: &Model, batch: &[&EpochRecord]) -> Result<(f64, Vec<Tensor>, Vec<SleepStage>)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let leaves = tape.tracked_leaves();
    let inputs: Vec<Var> = batch.iter().map(|r| tape.constant(&r.signal)).collect();
    let labels: Vec<SleepStage> = batch.iter().map(|r| r.label).collect();
    let (loss, logits) = batch_loss(&mut tape, &vars, &inputs, &labels)?;
    let loss_value = tape.value(loss)?.data()[0];
    let preds = tape
        .value(logits)?
        .data()
        .chunks_exact(SleepStage::COUNT)
        .map(argmax_stage)
        .collect();
    let grads = tape.backward(loss)?;
    let grads = leaves
        .into_iter()
        .map(|v| grads.get_or_zeros(&tape, v))
        .collect::<Result<Vec<_>>>()?;
    Ok((loss_value, grads, preds))
}

/// Trains `model` in place. Shuffling uses the `shuffle` stream of `config.seed`.
pub fn train(model: &mut Model, records: &[EpochRecord], config: &TrainConfig) -> Result<TrainTrace> {
    train_with(model, records, config, |_| {})
}

/// As [`train`], calling `on_epoch` after every pass.
pub fn train_with(
    model: &mut Model,
    records: &[EpochRecord],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainTrace> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::Empty);
    }
    for r in records {
        model.dims.check(&r.signal)?;
    }

    let mut sizes = Vec::new();
    model.visit(&mut |_, t: &Tensor| sizes.push(t.numel()));
    let mut adam = AdamState {
        m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        beta1_pow: 1.0,
        beta2_pow: 1.0,
    };

    let mut shuffle_rng = rng::stream(config.seed, rng::SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut trace = TrainTrace::default();

    for epoch in 0..config.epochs {
        rng::shuffle(&mut order, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&EpochRecord> = chunk.iter().map(|&i| &records[i]).collect();
            let (loss, grads, preds) = batch_gradients(model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            loss_sum += loss * batch.len() as f64;
            correct += batch.iter().zip(&preds).filter(|(r, p)| r.label == **p).count();
            apply_update(model, &grads, config, &mut adam);
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / records.len() as f64,
            accuracy: correct as f64 / records.len() as f64,
        };
        on_epoch(&stats);
        trace.epochs.push(stats);
    }
    Ok(trace)
}

fn apply_update(model: &mut Model, grads: &[Tensor], config: &TrainConfig, adam: &mut AdamState) {
    let lr = config.learning_rate;
    let mut index = 0;
    match config.optimizer {
        Optimizer::Sgd => model.visit_mut(&mut |_, p: &mut Tensor| {
            for (w, g) in p.data_mut().iter_mut().zip(grads[index].data()) {
                *w -= lr * g;
            }
            index += 1;
        }),
        Optimizer::Adam { beta1, beta2, eps } => {
            adam.beta1_pow *= beta1;
            adam.beta2_pow *= beta2;
            let (c1, c2) = (1.0 - adam.beta1_pow, 1.0 - adam.beta2_pow);
            let (ms, vs) = (&mut adam.m, &mut adam.v);
            model.visit_mut(&mut |_, p: &mut Tensor| {
                let g = grads[index].data();
                let m = &mut ms[index];
                let v = &mut vs[index];
                for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = beta1 * *mi + (1.0 - beta1) * gi;
                    *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                    let m_hat = *mi / c1;
                    let v_hat = *vi / c2;
                    *w -= lr * m_hat / (libm::sqrt(v_hat) + eps);
                }
                index += 1;
            });
        }
    }
}

/// Fraction of records whose predicted stage matches the label.
pub fn accuracy(model: &Model, records: &[EpochRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty);
    }
    let preds = model.predict(records)?;
    let hits = records.iter().zip(&preds).filter(|(r, p)| r.label == **p).count();
    Ok(hits as f64 / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::InputDims;
    use crate::model::{HeadKind, ModelConfig};
    use crate::synth::{generate_synthetic, SynthSpec};

    fn data(n: usize) -> Vec<EpochRecord> {
        generate_synthetic(&SynthSpec::new(3, 8, n, 5)).unwrap()
    }

    fn model(hass: bool) -> Model {
        Model::init(&ModelConfig::new(
            InputDims::new(3, 8, 1).unwrap(),
            hass,
            HeadKind::Linear,
            2,
        ))
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        for opt in [Optimizer::Sgd, Optimizer::adam()] {
            let mut m = model(true);
            let before = m.clone();
            let cfg = TrainConfig {
                epochs: 3,
                batch_size: 4,
                learning_rate: 0.0,
                optimizer: opt,
                seed: 1,
            };
            train(&mut m, &data(10), &cfg).unwrap();
            assert_eq!(m, before);
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let recs = data(12);
        let mut a = model(true);
        let mut b = model(true);
        let ta = train(&mut a, &recs, &cfg).unwrap();
        let tb = train(&mut b, &recs, &cfg).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a, b);
    }

    #[test]
    fn single_record_is_memorized() {
        let recs = data(1);
        let mut m = model(false);
        let cfg = TrainConfig {
            epochs: 400,
            batch_size: 1,
            learning_rate: 0.05,
            optimizer: Optimizer::adam(),
            seed: 0,
        };
        let trace = train(&mut m, &recs, &cfg).unwrap();
        assert!(trace.epochs.last().unwrap().loss <= 1e-3, "{:?}", trace.epochs.last());
    }

    #[test]
    fn rejects_bad_config_and_empty_data() {
        let mut m = model(false);
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(&mut m, &data(2), &bad).is_err());
        assert_eq!(train(&mut m, &[], &TrainConfig::default()), Err(Error::Empty));
    }

    #[test]
    fn nan_input_aborts_with_location() {
        let mut recs = data(6);
        recs[0].signal.data_mut()[0] = f64::NAN;
        let mut m = model(false);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 6,
            ..TrainConfig::default()
        };
        assert_eq!(
            train(&mut m, &recs, &cfg),
            Err(Error::NonFiniteLoss { epoch: 0, batch: 0 })
        );
    }
}
