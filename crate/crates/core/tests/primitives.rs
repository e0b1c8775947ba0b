mod common;

use avsync::autograd::Graph;
use avsync::ops::{self, DropoutMode};
use avsync::params::ParamStore;
use avsync::{Error, Rng, Tensor};
use proptest::prelude::*;

#[test]
fn every_primitive_passes_a_finite_difference_check() {
    for seed in 0..3 {
        for (name, err) in common::primitive_grad_checks(seed) {
            assert!(err <= 1e-6, "{name} (seed {seed}): relative error {err}");
        }
    }
}

#[test]
fn softmax_survives_huge_scores() {
    let s = ops::softmax(&Tensor::vector(&[1000.0, 1000.0, -1000.0]).unwrap()).unwrap();
    assert!((s.data()[0] - 0.5).abs() < 1e-15);
    assert_eq!(s.data()[2], 0.0);
}

#[test]
fn eval_dropout_is_identity_and_train_dropout_rescales() {
    let x = Tensor::full(&[1000], 2.0);
    assert_eq!(ops::dropout(&x, 0.5, DropoutMode::Eval, None).unwrap().0, x);
    let mut rng = Rng::new(9);
    let (y, _) = ops::dropout(&x, 0.25, DropoutMode::Train, Some(&mut rng)).unwrap();
    for &v in y.data() {
        assert!(v == 0.0 || (v - 2.0 / 0.75).abs() < 1e-12);
    }
    assert!(matches!(
        ops::dropout(&x, 1.0, DropoutMode::Train, Some(&mut rng)),
        Err(Error::InvalidProbability(_))
    ));
}

#[test]
fn cross_entropy_rejects_bad_labels() {
    let z = Tensor::vector(&[0.0, 1.0]).unwrap();
    assert!(matches!(ops::cross_entropy(&z, 2), Err(Error::InvalidLabel(2))));
    // log(1 + e) for the wrong class
    let l = ops::cross_entropy(&z, 0).unwrap();
    assert!((l - (1.0 + 1f64.exp()).ln()).abs() < 1e-14);
}

#[test]
fn backward_requires_a_scalar() {
    let mut store = ParamStore::new();
    let id = store.insert("x", Tensor::zeros(&[3])).unwrap();
    let mut g = Graph::new();
    let x = g.param(&store, id);
    let y = g.relu(x);
    assert!(matches!(g.backward(y, &mut store), Err(Error::Contract(_))));
}

#[test]
fn gradients_accumulate_across_graphs() {
    let mut store = ParamStore::new();
    let id = store.insert("x", Tensor::vector(&[1.0, -2.0]).unwrap()).unwrap();
    for _ in 0..2 {
        let mut g = Graph::new();
        let x = g.param(&store, id);
        let s = g.sum(x);
        g.backward(s, &mut store).unwrap();
    }
    assert_eq!(store.grad(id).data(), &[2.0, 2.0]);
}

proptest! {
    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        scores in prop::collection::vec(-50.0f64..50.0, 1..20),
        shift in -100.0f64..100.0,
    ) {
        let s = ops::softmax_slice(&scores).unwrap();
        let total: f64 = s.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(s.iter().all(|&p| p >= 0.0));
        let shifted: Vec<f64> = scores.iter().map(|v| v + shift).collect();
        let t = ops::softmax_slice(&shifted).unwrap();
        for (a, b) in s.iter().zip(&t) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
