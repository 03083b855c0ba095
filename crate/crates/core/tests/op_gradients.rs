//! Finite-difference checks of every tape operation on random shapes.

mod common;

use common::{rng, uniform};
use hass_core::gradcheck::{relative_error, DEFAULT_STEP};
use hass_core::{Result, Tape, Tensor, Var};
use rand::Rng;

const TOLERANCE: f64 = 1e-5;
const COORDS: usize = 50;

/// `sum(R ⊙ build(inputs))` for a fixed random `R`, so every output element matters.
fn projected(inputs: &[Tensor], seed: u64, build: &dyn Fn(&mut Tape<'_>, &[Var]) -> Result<Var>) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &vars).unwrap();
    let dims = tape.value(out).unwrap().dims().to_vec();
    let r = tape.constant_owned(uniform(&dims, &mut rng(seed)));
    let weighted = tape.mul(out, r).unwrap();
    let loss = tape.sum(weighted).unwrap();
    let value = tape.value(loss).unwrap().data()[0];
    let grads = tape.backward(loss).unwrap();
    let grads = vars.iter().map(|&v| grads.get_or_zeros(&tape, v).unwrap()).collect();
    (value, grads)
}

fn check(name: &str, inputs: Vec<Tensor>, seed: u64, build: impl Fn(&mut Tape<'_>, &[Var]) -> Result<Var>) {
    let (_, analytic) = projected(&inputs, seed, &build);
    let mut r = rng(seed.wrapping_add(1));
    let mut worst = 0.0f64;
    for _ in 0..COORDS {
        let which = r.gen_range(0..inputs.len());
        let coord = r.gen_range(0..inputs[which].numel());
        let mut probe = inputs.clone();
        let orig = probe[which].data()[coord];
        probe[which].data_mut()[coord] = orig + DEFAULT_STEP;
        let plus = projected(&probe, seed, &build).0;
        probe[which].data_mut()[coord] = orig - DEFAULT_STEP;
        let minus = projected(&probe, seed, &build).0;
        let numeric = (plus - minus) / (2.0 * DEFAULT_STEP);
        worst = worst.max(relative_error(analytic[which].data()[coord], numeric));
    }
    assert!(worst <= TOLERANCE, "{name}: max relative error {worst:e}");
}

fn dims(r: &mut impl Rng) -> (usize, usize, usize) {
    (r.gen_range(1..=8), r.gen_range(1..=8), r.gen_range(1..=8))
}

/// Keeps values at least 0.05 away from the rectifier kink.
fn off_kink(mut t: Tensor) -> Tensor {
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    }
    t
}

#[test]
fn elementary_ops() {
    for seed in 0..20u64 {
        let mut r = rng(seed);
        let (p, q, n) = dims(&mut r);
        check(
            "matmul",
            vec![uniform(&[p, q], &mut r), uniform(&[q, n], &mut r)],
            seed,
            |t, v| t.matmul(v[0], v[1]),
        );
        check("transpose", vec![uniform(&[p, q], &mut r)], seed, |t, v| {
            t.transpose(v[0])
        });
        check("transpose3", vec![uniform(&[p, q, n], &mut r)], seed, |t, v| {
            t.transpose(v[0])
        });
        check("reshape", vec![uniform(&[p, q, n], &mut r)], seed, |t, v| {
            t.reshape(v[0], &[q, p * n])
        });
        check(
            "add",
            vec![uniform(&[p, q], &mut r), uniform(&[p, q], &mut r)],
            seed,
            |t, v| t.add(v[0], v[1]),
        );
        check(
            "mul",
            vec![uniform(&[p, q], &mut r), uniform(&[p, q], &mut r)],
            seed,
            |t, v| t.mul(v[0], v[1]),
        );
        check(
            "add_bias",
            vec![uniform(&[p, q], &mut r), uniform(&[p], &mut r)],
            seed,
            |t, v| t.add_bias(v[0], v[1]),
        );
        check("scale", vec![uniform(&[p, q], &mut r)], seed, |t, v| {
            t.scale(v[0], -1.7)
        });
        check("relu", vec![off_kink(uniform(&[p, q], &mut r))], seed, |t, v| {
            t.relu(v[0])
        });
        check("sum", vec![uniform(&[p, q], &mut r)], seed, |t, v| t.sum(v[0]));
        check(
            "concat_rows",
            vec![uniform(&[p, n], &mut r), uniform(&[q, n], &mut r)],
            seed,
            |t, v| t.concat_rows(&[v[0], v[1]]),
        );
        let k = r.gen_range(1..=n);
        check("im2col", vec![uniform(&[p, n], &mut r)], seed, move |t, v| {
            t.im2col(v[0], k)
        });
    }
}

#[test]
fn softmax_and_normalization() {
    for seed in 0..20u64 {
        let mut r = rng(100 + seed);
        let (p, q, _) = dims(&mut r);
        let scaled = uniform(&[p, q], &mut r).scale(3.0);
        check("softmax_rows", vec![scaled], seed, |t, v| t.softmax_rows(v[0]));
        let d = r.gen_range(2..=8);
        check(
            "layer_norm_cols",
            vec![uniform(&[d, q], &mut r), uniform(&[d], &mut r), uniform(&[d], &mut r)],
            seed,
            |t, v| t.layer_norm_cols(v[0], v[1], v[2], 1e-5),
        );
        check(
            "layer_norm",
            vec![uniform(&[d], &mut r), uniform(&[d], &mut r), uniform(&[d], &mut r)],
            seed,
            |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5),
        );
    }
}

#[test]
fn cross_entropy() {
    for seed in 0..20u64 {
        let mut r = rng(200 + seed);
        let b = r.gen_range(1..=8);
        let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..5)).collect();
        let logits = uniform(&[b, 5], &mut r).scale(2.0);
        check("cross_entropy", vec![logits], seed, move |t, v| {
            t.cross_entropy(v[0], &labels)
        });
    }
}

#[test]
fn tracking_follows_inputs() {
    let w = Tensor::identity(2).unwrap();
    let x = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
    let mut tape = Tape::new();
    let wv = tape.leaf(&w);
    let xv = tape.constant(&x);
    let y = tape.matmul(wv, xv).unwrap();
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.get(xv).is_none());
    assert_eq!(g.get(wv).unwrap().data(), &[3.0, 7.0, 3.0, 7.0]);
}

#[test]
fn backward_rejects_non_scalar_and_foreign_vars() {
    let x = Tensor::identity(2).unwrap();
    let mut a = Tape::new();
    let xa = a.leaf(&x);
    assert!(matches!(a.backward(xa), Err(hass_core::Error::NotScalar(_))));
    let mut b = Tape::new();
    let xb = b.leaf(&x);
    let sb = b.sum(xb).unwrap();
    assert_eq!(a.backward(sb).err(), Some(hass_core::Error::ForeignVar));
}
