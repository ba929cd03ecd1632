mod common;

use common::gradcheck::{op_suite, run_case};
use ihn_core::tensor::{Padding, ParamStore, Tape, Tensor};

#[test]
fn every_op_matches_finite_differences() {
    for (name, case) in op_suite() {
        let err = run_case(case, 100, 0xA11CE);
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn conv_identity_and_bias_only() {
    let x = Tensor::<f64>::from_fn(&[2, 3, 3], |i| i as f64 * 0.5 - 2.0);
    let mut eye = Tensor::<f64>::zeros(&[2, 2, 1, 1]);
    eye.data_mut()[0] = 1.0;
    eye.data_mut()[3] = 1.0;
    let mut t = Tape::inference();
    let xv = t.constant(x.clone());
    let w = t.constant(eye);
    let y = t.conv2d(xv, w, None, 1, 0).unwrap();
    assert_eq!(t.value(y).data(), x.data());

    let w0 = t.constant(Tensor::zeros(&[1, 2, 3, 3]));
    let b = t.constant(Tensor::full(&[1], 0.75));
    let y = t.conv2d(xv, w0, Some(b), 1, 1).unwrap();
    assert!(t.value(y).data().iter().all(|&v| v == 0.75));
}

#[test]
fn pooling_examples() {
    let mut t = Tape::<f64>::inference();
    let c = t.constant(Tensor::full(&[1, 4, 4], 3.5));
    let m = t.max_pool2(c).unwrap();
    let a = t.avg_pool2(c).unwrap();
    assert!(t.value(m).data().iter().all(|&v| v == 3.5));
    assert!(t.value(a).data().iter().all(|&v| v == 3.5));
    let x = t.constant(Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let m = t.max_pool2(x).unwrap();
    let a = t.avg_pool2(x).unwrap();
    assert_eq!(t.value(m).data(), &[4.0]);
    assert_eq!(t.value(a).data(), &[2.5]);
}

#[test]
fn relu_sigmoid_values_and_slopes() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::new(&[3], vec![-1.0, 1.0, 0.0]).unwrap());
    let r = t.relu(x);
    let s = t.sigmoid(x);
    assert_eq!(t.value(r).data()[..2], [0.0, 1.0]);
    assert_eq!(t.value(s).data()[2], 0.5);
    let l = t.sum(r);
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap()[..2], [0.0, 1.0]);
}

#[test]
fn group_norm_standardizes_each_group() {
    let mut t = Tape::<f64>::inference();
    let x = t.constant(Tensor::from_fn(&[4, 3, 5], |i| ((i * 37) % 11) as f64 * 0.3 + i as f64 * 0.01));
    let g = t.constant(Tensor::full(&[4], 1.0));
    let b = t.constant(Tensor::zeros(&[4]));
    let y = t.group_norm(x, 2, g, b).unwrap();
    for grp in t.value(y).data().chunks(2 * 15) {
        let n = grp.len() as f64;
        let mean = grp.iter().sum::<f64>() / n;
        let var = grp.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5);
        // eps = 1e-5 shrinks the variance by var/(var+eps)
        assert!((var - 1.0).abs() < 1e-4, "{var}");
    }
}

#[test]
fn grid_sample_examples() {
    let img = Tensor::<f64>::new(&[1, 2, 2], vec![0.0, 2.0, 5.0, 7.0]).unwrap();
    let coords = Tensor::new(&[2, 1, 3], vec![0.5, 1.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
    let mut t = Tape::inference();
    let x = t.constant(img);
    let c = t.constant(coords);
    let y = t.grid_sample(x, c, Padding::Zeros).unwrap();
    assert_eq!(t.value(y).data(), &[1.0, 7.0, 5.0]);
}

#[test]
fn grad_of_weighted_sum_is_input() {
    let mut store = ParamStore::<f64>::new();
    let w = store.register("w", Tensor::new(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
    let x = Tensor::new(&[4], vec![3.0, -1.0, 0.5, 2.0]).unwrap();
    let mut t = Tape::new();
    let wv = t.param(&store, w);
    let xv = t.constant(x.clone());
    let p = t.mul(wv, xv).unwrap();
    let l = t.sum(p);
    t.backward_into(l, &mut store).unwrap();
    assert_eq!(store.get(w).grad().unwrap(), x.data());
}

#[test]
fn loss_without_parameters_has_no_grad_path() {
    let mut t = Tape::<f64>::new();
    let c = t.constant(Tensor::full(&[3], 1.0));
    let l = t.sum(c);
    assert!(matches!(t.backward(l), Err(ihn_core::Error::NoGradPath)));
}

#[test]
fn forward_is_deterministic_and_replayable() {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ihn_core::rng::SplitMix64::new(5);
    let w = store.conv_weight("w", 4, 2, 3, &mut rng);
    let x = Tensor::<f32>::from_fn(&[2, 8, 8], |i| (i as f32 * 0.13).sin());
    let run = || {
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let wv = t.param(&store, w);
        let y = t.conv2d(xv, wv, None, 1, 1).unwrap();
        let y = t.relu(y);
        let l = t.mean(y);
        t.value(l).item()
    };
    assert_eq!(run().to_bits(), run().to_bits());
}

#[test]
fn non_finite_values_fail_backward_in_debug() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::new(&[2], vec![1.0, f64::NAN]).unwrap());
    let s = t.sum(x);
    assert_eq!(t.first_non_finite(), Some(0));
    if cfg!(debug_assertions) {
        let err = t.backward(s).unwrap_err();
        assert!(matches!(err, ihn_core::Error::NonFiniteValue { node: 0 }));
    }
    t.truncate(0);
    assert_eq!(t.first_non_finite(), None);
}
