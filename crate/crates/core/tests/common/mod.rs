#![allow(dead_code)]

use hass_core::{HeadKind, InputDims, Model, ModelConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(dims: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Model with every parameter (including biases and layer-norm affine) drawn at random.
pub fn random_model(dims: InputDims, hass: bool, head: HeadKind, heads: Option<usize>, seed: u64) -> Model {
    let mut cfg = ModelConfig::new(dims, hass, head, seed);
    cfg.heads = heads;
    let mut model = Model::init(&cfg).unwrap();
    let mut r = rng(seed ^ 0xdead_beef);
    model.visit_mut(&mut |name, t: &mut Tensor| {
        let gain = name.ends_with(".gain");
        for v in t.data_mut() {
            let u: f64 = r.gen_range(-1.0..1.0);
            *v = if gain { 1.0 + 0.3 * u } else { 0.5 * u };
        }
    });
    model
}
