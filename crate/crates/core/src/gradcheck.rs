//! Central finite-difference verification of model gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{batch_loss, Model};
use crate::synth::EpochRecord;
use crate::tensor::Tensor;
use crate::train::batch_gradients;

pub const DEFAULT_STEP: f64 = 1e-4;

/// `|a - n| / max(1, |a|, |n|)`: relative for large gradients, absolute near zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = libm::fabs(analytic).max(libm::fabs(numeric)).max(1.0);
    libm::fabs(analytic - numeric) / scale
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], step: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + step;
            let plus = f(&x);
            x[i] = point[i] - step;
            let minus = f(&x);
            x[i] = point[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Mean cross-entropy of `model` over `records`, forward only.
pub fn model_loss(model: &Model, records: &[EpochRecord]) -> Result<f64> {
    let refs: Vec<&EpochRecord> = records.iter().collect();
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let inputs: Vec<Var> = refs.iter().map(|r| tape.constant(&r.signal)).collect();
    let labels: Vec<_> = refs.iter().map(|r| r.label).collect();
    let (loss, _) = batch_loss(&mut tape, &vars, &inputs, &labels)?;
    Ok(tape.value(loss)?.data()[0])
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorError {
    pub name: String,
    pub max_error: f64,
    pub coordinates: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_error: f64,
    /// Tensor name and flat coordinate of the largest error.
    pub worst: (String, usize),
    pub coordinates: usize,
    pub tensors: Vec<TensorError>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_error <= tolerance
    }
}

fn perturb(model: &mut Model, tensor: usize, coord: usize, value: f64) {
    let mut i = 0;
    model.visit_mut(&mut |_, t: &mut Tensor| {
        if i == tensor {
            t.data_mut()[coord] = value;
        }
        i += 1;
    });
}

/// Compares tape gradients of the mean batch loss against central differences
/// over every coordinate of every parameter tensor.
pub fn check_model_gradients(model: &Model, records: &[EpochRecord], step: f64) -> Result<GradCheckReport> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let refs: Vec<&EpochRecord> = records.iter().collect();
    let (_, analytic, _) = batch_gradients(model, &refs)?;

    let mut params: Vec<(String, Tensor)> = Vec::new();
    model.visit(&mut |name: String, t: &Tensor| params.push((name, t.clone())));

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_error: 0.0,
        worst: (String::new(), 0),
        coordinates: 0,
        tensors: Vec::with_capacity(params.len()),
    };
    for (ti, (name, tensor)) in params.iter().enumerate() {
        let mut tensor_max = 0.0f64;
        for (ci, &orig) in tensor.data().iter().enumerate() {
            perturb(&mut probe, ti, ci, orig + step);
            let plus = model_loss(&probe, records)?;
            perturb(&mut probe, ti, ci, orig - step);
            let minus = model_loss(&probe, records)?;
            perturb(&mut probe, ti, ci, orig);
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic[ti].data()[ci], numeric);
            if err > report.max_error || report.coordinates == 0 {
                report.max_error = err;
                report.worst = (name.clone(), ci);
            }
            tensor_max = tensor_max.max(err);
            report.coordinates += 1;
        }
        report.tensors.push(TensorError {
            name: name.clone(),
            max_error: tensor_max,
            coordinates: tensor.numel(),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_quadratic() {
        let g = central_difference(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-4);
        assert!(libm::fabs(g[0] - 4.0) < 1e-9);
        assert!(libm::fabs(g[1] - 3.0) < 1e-9);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-9, 0.0), 1e-9);
        assert!(libm::fabs(relative_error(100.0, 101.0) - 1.0 / 101.0) < 1e-15);
    }
}
