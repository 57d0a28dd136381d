//! Minimal reverse-mode differentiation for small dense networks unrolled through time.

mod checkpoint;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{
    load as load_checkpoint, read_manifest, save as save_checkpoint, CheckpointError, Manifest,
    CHECKPOINT_VERSION,
};
pub use graph::{sigmoid, softmax, Graph, NodeId};
pub use params::{ParamLayout, ParameterVector, Partition, SlotId, SlotInfo};
pub use tensor::Tensor;

use rand::Rng;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: dimension mismatch, expected {expected:?}, found {found:?}")]
    Shape {
        op: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("parameter count mismatch: expected {expected}, found {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("index {index} out of range for {cols} columns")]
    Index { index: usize, cols: usize },
    #[error("backward already ran on this graph; gradients would accumulate twice")]
    BackwardTwice,
    #[error("loss must be 1x1, found {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
}

/// Glorot-uniform weights for every two-dimensional slot whose name ends in `.w`;
/// every other slot (biases) is zeroed.
pub fn glorot_init<T: Scalar, R: Rng + ?Sized>(params: &mut ParameterVector<T>, rng: &mut R) {
    let layout = params.layout().clone();
    for (i, info) in layout.slots().iter().enumerate() {
        let slot = params.slot_mut(SlotId(i));
        if info.name.ends_with(".w") {
            let [fan_out, fan_in] = info.shape;
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in slot.iter_mut() {
                *v = T::of(rng.gen_range(-bound..bound));
            }
        } else {
            slot.fill(T::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn layer(w: &[f64], rows: usize, cols: usize, b: &[f64]) -> (ParameterVector<f64>, SlotId, SlotId) {
        let mut layout = ParamLayout::new();
        let ws = layout.add("l.w", rows, cols, Partition::Sub);
        let bs = layout.add("l.b", rows, 1, Partition::Sub);
        let mut p = ParameterVector::zeros(Arc::new(layout));
        p.slot_mut(ws).copy_from_slice(w);
        p.slot_mut(bs).copy_from_slice(b);
        (p, ws, bs)
    }

    #[test]
    fn dense_identity() {
        let (p, w, b) = layer(Tensor::<f64>::identity(2).data(), 2, 2, &[0.0, 0.0]);
        let mut g = Graph::new(&p);
        let x = g.constant(Tensor::row(&[3.0, -1.0]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -1.0]);
    }

    #[test]
    fn dense_zero_weights_returns_bias() {
        let (p, w, b) = layer(&[0.0; 4], 2, 2, &[1.0, 2.0]);
        let mut g = Graph::new(&p);
        let x = g.constant(Tensor::row(&[17.0, -4.5]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_forced_arithmetic() {
        let (p, w, b) = layer(&[1.0, 1.0, 1.0, -1.0], 2, 2, &[0.0, 0.0]);
        let mut g = Graph::new(&p);
        let x = g.constant(Tensor::row(&[2.0, 3.0]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, -1.0]);
    }

    #[test]
    fn dense_shape_mismatch() {
        let (p, w, b) = layer(&[0.0; 4], 2, 2, &[0.0, 0.0]);
        let mut g = Graph::new(&p);
        let x = g.constant(Tensor::row(&[1.0, 2.0, 3.0]));
        assert!(matches!(g.dense(x, w, b), Err(AutodiffError::Shape { .. })));
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0_f64), 0.5);
        assert!((sigmoid(40.0_f64) - 1.0).abs() <= 1e-12);
        let x = 1.7_f64;
        assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-15);
        assert!(sigmoid(-1000.0_f64) >= 0.0 && sigmoid(1000.0_f64) <= 1.0);
        assert!(sigmoid(-1000.0_f64).is_finite());
    }

    #[test]
    fn softmax_values() {
        assert_eq!(softmax(&[0.0_f64; 4]), vec![0.25; 4]);
        let v = [0.3, -1.2, 2.0];
        let shifted: Vec<f64> = v.iter().map(|x| x + 100.0).collect();
        for (a, b) in softmax(&v).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = softmax(&[3.0_f64.ln(), 0.0]);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn backward_linear() {
        let mut layout = ParamLayout::new();
        let w = layout.add("w", 1, 1, Partition::Sub);
        let mut p = ParameterVector::zeros(Arc::new(layout));
        p.slot_mut(w)[0] = 0.7;
        let mut g = Graph::new(&p);
        let wn = g.param(w);
        let x = g.constant(Tensor::scalar(2.0));
        let loss = g.mul(wn, x).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.slot(w), &[2.0]);
    }

    #[test]
    fn backward_sigmoid_at_zero() {
        let mut layout = ParamLayout::new();
        let w = layout.add("w", 1, 1, Partition::Sub);
        let p = ParameterVector::<f64>::zeros(Arc::new(layout));
        let mut g = Graph::new(&p);
        let wn = g.param(w);
        let x = g.constant(Tensor::scalar(1.0));
        let z = g.mul(wn, x).unwrap();
        let loss = g.sigmoid(z);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.slot(w), &[0.25]);
    }

    #[test]
    fn backward_twice_is_flagged() {
        let mut layout = ParamLayout::new();
        let w = layout.add("w", 1, 1, Partition::Sub);
        let p = ParameterVector::<f64>::zeros(Arc::new(layout));
        let mut g = Graph::new(&p);
        let loss = g.param(w);
        g.backward(loss).unwrap();
        assert_eq!(g.backward(loss), Err(AutodiffError::BackwardTwice));
    }

    #[test]
    fn unreachable_slots_have_zero_gradient() {
        let mut layout = ParamLayout::new();
        let w = layout.add("w", 1, 1, Partition::Sub);
        let unused = layout.add("unused", 3, 2, Partition::High);
        let mut p = ParameterVector::<f64>::zeros(Arc::new(layout));
        p.as_mut_slice().fill(0.3);
        let mut g = Graph::new(&p);
        let loss = g.param(w);
        let grads = g.backward(loss).unwrap();
        assert!(grads.slot(unused).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let p = ParameterVector::<f64>::zeros(Arc::new(ParamLayout::new()));
        let mut g = Graph::new(&p);
        let x = g.constant(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(AutodiffError::NonScalarLoss { .. })));
    }

    /// Two tanh layers feeding every differentiable op the policy losses use.
    fn two_layer_loss(p: &ParameterVector<f64>, x: &Tensor<f64>) -> (f64, Option<ParameterVector<f64>>) {
        let l = p.layout().clone();
        let id = |n: &str| l.find(n).unwrap();
        let mut g = Graph::new(p);
        let xn = g.constant(x.clone());
        let h1 = g.dense(xn, id("a.w"), id("a.b")).unwrap();
        let h1 = g.tanh(h1);
        let out = g.dense(h1, id("b.w"), id("b.b")).unwrap();
        let logits = g.slice(out, 0, 3).unwrap();
        let gate_pre = g.slice(out, 3, 1).unwrap();
        let gate = g.sigmoid(gate_pre);
        let probs = g.softmax(logits);
        let logp = g.log_softmax(logits);
        let picked = g.pick(logp, &[0, 2]).unwrap();
        let blended = g.mul_col(probs, gate).unwrap();
        let ratio = g.exp(picked);
        let clipped = g.clamp(ratio, 0.2, 0.5);
        let m = g.minimum(ratio, clipped).unwrap();
        let cat = g.concat(blended, m).unwrap();
        let sq = g.square(cat);
        let rs = g.row_sum(sq);
        let shifted = g.affine(rs, -0.5, 1.0);
        let both = g.add(shifted, picked).unwrap();
        let diff = g.sub(both, gate).unwrap();
        let loss = g.sum(diff);
        let value = g.value(loss).item();
        (value, Some(g.backward(loss).unwrap()))
    }

    #[test]
    fn two_layer_gradient_matches_central_differences() {
        let mut layout = ParamLayout::new();
        layout.add("a.w", 5, 3, Partition::High);
        layout.add("a.b", 5, 1, Partition::High);
        layout.add("b.w", 4, 5, Partition::Sub);
        layout.add("b.b", 4, 1, Partition::Sub);
        let layout = Arc::new(layout);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut p = ParameterVector::<f64>::zeros(layout.clone());
            for v in p.as_mut_slice() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let x = Tensor::from_vec(2, 3, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let (_, grads) = two_layer_loss(&p, &x);
            let grads = grads.unwrap();
            let step = 1e-5;
            for i in 0..p.len() {
                let mut plus = p.clone();
                plus.as_mut_slice()[i] += step;
                let mut minus = p.clone();
                minus.as_mut_slice()[i] -= step;
                let numeric = (two_layer_loss(&plus, &x).0 - two_layer_loss(&minus, &x).0) / (2.0 * step);
                let analytic = grads.as_slice()[i];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(rel <= 1e-4, "param {i}: analytic {analytic} numeric {numeric}");
            }
        }
    }

    #[test]
    fn forward_and_backward_are_bit_deterministic() {
        let mut layout = ParamLayout::new();
        layout.add("a.w", 5, 3, Partition::High);
        layout.add("a.b", 5, 1, Partition::High);
        layout.add("b.w", 4, 5, Partition::Sub);
        layout.add("b.b", 4, 1, Partition::Sub);
        let mut p = ParameterVector::<f64>::zeros(Arc::new(layout));
        glorot_init(&mut p, &mut ChaCha8Rng::seed_from_u64(3));
        let x = Tensor::from_vec(2, 3, vec![0.1, -0.4, 0.9, 0.3, 0.3, -0.8]).unwrap();
        let (v1, g1) = two_layer_loss(&p, &x);
        let (v2, g2) = two_layer_loss(&p, &x);
        assert_eq!(v1.to_bits(), v2.to_bits());
        assert_eq!(g1, g2);
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let mut layout = ParamLayout::new();
        let w = layout.add("x.w", 64, 27, Partition::High);
        let b = layout.add("x.b", 64, 1, Partition::High);
        let mut p = ParameterVector::<f64>::zeros(Arc::new(layout));
        p.as_mut_slice().fill(9.0);
        glorot_init(&mut p, &mut ChaCha8Rng::seed_from_u64(0));
        let bound = (6.0_f64 / 91.0).sqrt();
        assert!(p.slot(w).iter().all(|v| v.abs() <= bound));
        assert!(p.slot(b).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut layout = ParamLayout::new();
        layout.add("x.w", 3, 2, Partition::High);
        layout.add("x.b", 3, 1, Partition::Value);
        let layout = Arc::new(layout);
        let mut p = ParameterVector::<f64>::zeros(layout.clone());
        glorot_init(&mut p, &mut ChaCha8Rng::seed_from_u64(5));
        p.as_mut_slice()[7] = f64::MIN_POSITIVE / 3.0;
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        save_checkpoint(&stem, &p, serde_json::json!({"note": "x"})).unwrap();
        let (q, manifest) = load_checkpoint::<f64>(&stem, layout).unwrap();
        assert_eq!(manifest.version, CHECKPOINT_VERSION);
        let bits = |v: &ParameterVector<f64>| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&q));
    }

    #[test]
    fn checkpoint_rejects_other_architecture() {
        let mut a = ParamLayout::new();
        a.add("x.w", 3, 2, Partition::High);
        let mut b = ParamLayout::new();
        b.add("x.w", 2, 3, Partition::High);
        let p = ParameterVector::<f64>::zeros(Arc::new(a));
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        save_checkpoint(&stem, &p, serde_json::Value::Null).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&stem, Arc::new(b)),
            Err(CheckpointError::Architecture(_))
        ));
    }

    proptest! {
        #[test]
        fn softmax_on_simplex(v in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let p = softmax(&v);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn sigmoid_in_unit_interval(x in -30.0f64..30.0) {
            let s = sigmoid(x);
            prop_assert!(s > 0.0 && s < 1.0);
        }

        #[test]
        fn f32_checkpoint_survives_f64_payload(vals in proptest::collection::vec(-1e3f32..1e3, 6)) {
            let mut layout = ParamLayout::new();
            layout.add("x.w", 2, 3, Partition::Sub);
            let layout = Arc::new(layout);
            let p = ParameterVector::from_vec(layout.clone(), vals).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let stem = dir.path().join("c");
            save_checkpoint(&stem, &p, serde_json::Value::Null).unwrap();
            let (q, _) = load_checkpoint::<f32>(&stem, layout).unwrap();
            prop_assert_eq!(p, q);
        }
    }
}
