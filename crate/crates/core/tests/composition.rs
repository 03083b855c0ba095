//! The tape-based model against the nested-loop reference evaluator.

mod common;

use common::{random_model, rng, uniform};
use hass_core::gradcheck::{check_model_gradients, DEFAULT_STEP};
use hass_core::stage::argmax_stage;
use hass_core::synth::generate_synthetic;
use hass_core::{oracle, HeadKind, InputDims, Model, SleepStage, SynthSpec, Tensor};
use rand::Rng;

#[test]
fn encode_matches_reference() {
    let mut g = rng(11);
    for case in 0..20u64 {
        let (c, t) = (g.gen_range(1..=6), g.gen_range(1..=8));
        let heads = if c % 2 == 0 && t % 2 == 0 { 2 } else { 1 };
        let model = random_model(
            InputDims::new(c, t, 1).unwrap(),
            true,
            HeadKind::Linear,
            Some(heads),
            case,
        );
        let enc = model.encoder.as_ref().unwrap();
        let x = uniform(&[c, t, 1], &mut g).scale(2.0);
        let got = enc.encode(&x).unwrap();
        let want = oracle::encode(&x, enc);
        assert!(got.max_abs_diff(&want).unwrap() <= 1e-10, "case {case}: C={c} T={t}");
        assert!(
            enc.intra_channel_block(&x)
                .unwrap()
                .max_abs_diff(&oracle::intra_block(&x, enc))
                .unwrap()
                <= 1e-10
        );
    }
}

#[test]
fn encode_matches_reference_with_depth() {
    let model = random_model(InputDims::new(3, 4, 2).unwrap(), true, HeadKind::Linear, Some(2), 5);
    let enc = model.encoder.as_ref().unwrap();
    let x = uniform(&[3, 4, 2], &mut rng(5));
    assert!(enc.encode(&x).unwrap().max_abs_diff(&oracle::encode(&x, enc)).unwrap() <= 1e-10);
}

#[test]
fn logits_and_predictions_match_reference() {
    let mut g = rng(12);
    for case in 0..12u64 {
        let (c, t) = (g.gen_range(1..=5), g.gen_range(5..=10));
        let head = if case % 2 == 0 {
            HeadKind::Linear
        } else {
            HeadKind::tiny_conv()
        };
        let model = random_model(InputDims::new(c, t, 1).unwrap(), case % 3 != 0, head, Some(1), case);
        let records = generate_synthetic(&SynthSpec::new(c, t, 8, case)).unwrap();
        let preds = model.predict(&records).unwrap();
        for (r, p) in records.iter().zip(&preds) {
            let got = model.logits(&r.signal).unwrap();
            let want = oracle::logits(&model, &r.signal);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-10, "case {case}");
            }
            assert_eq!(*p, argmax_stage(&want));
        }
    }
}

fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    v.iter().map(|x| (x - mean) / (var + 1e-5).sqrt()).collect()
}

#[test]
fn zero_sublayers_reduce_to_double_normalization() {
    let (c, t) = (4, 6);
    let mut model = Model::init(&hass_core::ModelConfig::new(
        InputDims::new(c, t, 1).unwrap(),
        true,
        HeadKind::Linear,
        3,
    ))
    .unwrap();
    model.visit_mut(&mut |name, p: &mut Tensor| {
        if name.starts_with("enc.") && !name.contains(".ln") {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    });
    let x = uniform(&[c, t, 1], &mut rng(3)).scale(4.0);

    // Channel tokens: each column is one channel's time series.
    let mut stage1 = vec![0.0; c * t];
    for ch in 0..c {
        let series: Vec<f64> = (0..t).map(|ti| x.at3(ch, ti, 0)).collect();
        let once = standardize(&series);
        for (ti, v) in standardize(&once).into_iter().enumerate() {
            stage1[ch * t + ti] = v;
        }
    }
    // Time tokens: each column is one time slice across channels.
    let mut expected = vec![0.0; c * t];
    for ti in 0..t {
        let slice: Vec<f64> = (0..c).map(|ch| stage1[ch * t + ti]).collect();
        let once = standardize(&slice);
        for (ch, v) in standardize(&once).into_iter().enumerate() {
            expected[ch * t + ti] = v;
        }
    }
    let got = model.encoder.as_ref().unwrap().encode(&x).unwrap();
    let expected = Tensor::new(&[c, t, 1], expected).unwrap();
    assert!(got.max_abs_diff(&expected).unwrap() <= 1e-10);
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for (head, heads, hass) in [
        (HeadKind::Linear, 1, true),
        (HeadKind::tiny_conv(), 1, true),
        (HeadKind::Linear, 1, false),
    ] {
        let dims = InputDims::new(3, 4, 1).unwrap();
        let head = match head {
            HeadKind::TinyConv { filters, .. } => HeadKind::TinyConv { kernel: 3, filters },
            h => h,
        };
        let model = random_model(dims, hass, head, Some(heads), 21);
        let records = generate_synthetic(&SynthSpec::new(3, 4, 2, 21)).unwrap();
        let report = check_model_gradients(&model, &records, DEFAULT_STEP).unwrap();
        assert!(report.passes(1e-5), "{head:?} hass={hass}: {:?}", report.worst);
        assert_eq!(report.coordinates, model.param_count());
    }
}

#[test]
fn predictions_ignore_dataset_order() {
    let model = random_model(InputDims::new(3, 8, 1).unwrap(), true, HeadKind::Linear, None, 4);
    let records = generate_synthetic(&SynthSpec::new(3, 8, 30, 4)).unwrap();
    let forward = model.predict(&records).unwrap();
    let mut reversed = records.clone();
    reversed.reverse();
    let mut backward = model.predict(&reversed).unwrap();
    backward.reverse();
    assert_eq!(forward, backward);
}

#[test]
fn linear_probe_separates_synthetic_classes() {
    let train = generate_synthetic(&SynthSpec::new(6, 64, 1000, 7)).unwrap();
    let held_out = generate_synthetic(&SynthSpec::new(6, 64, 300, 1007)).unwrap();
    let mut probe = Model::init(&hass_core::ModelConfig::new(
        InputDims::new(6, 64, 1).unwrap(),
        false,
        HeadKind::Linear,
        0,
    ))
    .unwrap();
    hass_core::train::train(
        &mut probe,
        &train,
        &hass_core::TrainConfig {
            epochs: 5,
            ..Default::default()
        },
    )
    .unwrap();
    let acc = hass_core::train::accuracy(&probe, &held_out).unwrap();
    assert!(acc >= 0.80, "linear probe accuracy {acc}");
    assert!(SleepStage::ALL.iter().all(|s| held_out.iter().any(|r| r.label == *s)));
}
