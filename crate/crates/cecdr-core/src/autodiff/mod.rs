//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! The op set is exactly what the models in this crate need: matrix
//! products, row broadcasts, sigmoid/log/LeakyReLU, masked softmax, layer
//! normalization, inverted dropout, embedding gather, max-pooling over the
//! sequence axis, concatenation, and stop-gradient.

mod graph;
mod tensor;

pub use graph::{sigmoid, Graph, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::CecdrError;
    use crate::gradcheck;
    use crate::rng::{stream, Stream};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_equal_logits_split_evenly() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.0, 0.0]), false);
        let y = g.softmax(x, false).unwrap();
        assert_eq!(g.value(y).values(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = stream(1, Stream::GradCheck, 1);
        let t = gradcheck::random_tensor(vec![5, 7], -4.0, 4.0, &mut rng);
        let mut g = Graph::new();
        let x = g.leaf(t, false);
        let y = g.softmax(x, false).unwrap();
        for i in 0..5 {
            let s: f64 = g.value(y).row(i).iter().sum();
            assert!(close(s, 1.0, 1e-12), "row {i} sums to {s}");
            assert!(g.value(y).row(i).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn causal_softmax_masks_the_future() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(3, 3, vec![1.0; 9]).unwrap(), false);
        let y = g.softmax(x, true).unwrap();
        assert_eq!(g.value(y).row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(g.value(y).row(1), &[0.5, 0.5, 0.0]);
        let r2: f64 = g.value(y).row(2).iter().sum();
        assert!(close(r2, 1.0, 1e-12));
    }

    #[test]
    fn sigmoid_at_zero_and_its_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(0.0), true);
        let y = g.sigmoid(w).unwrap();
        assert_eq!(g.value(y).values()[0], 0.5);
        g.backward(y).unwrap();
        assert!(close(g.grad(w).unwrap()[0], 0.25, 1e-15));
    }

    #[test]
    fn max_pool_takes_columnwise_maxima() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(2, 2, vec![1.0, 5.0, 3.0, 2.0]).unwrap(), false);
        let y = g.max_pool_rows(x).unwrap();
        assert_eq!(g.value(y).values(), &[3.0, 5.0]);
    }

    #[test]
    fn stop_gradient_passes_values_and_blocks_gradient() {
        // loss = sg(w) * w at w = 2 → dloss/dw = sg(w) = 2
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(2.0), true);
        let frozen = g.stop_gradient(w).unwrap();
        assert_eq!(g.value(frozen).values(), g.value(w).values());
        let loss = g.mul(frozen, w).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[2.0]);
        assert!(g.grad(frozen).is_none());
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_variance() {
        let mut rng = stream(2, Stream::GradCheck, 2);
        let t = gradcheck::random_tensor(vec![4, 16], -3.0, 3.0, &mut rng);
        let mut g = Graph::new();
        let x = g.leaf(t, false);
        let y = g.layer_norm(x).unwrap();
        for i in 0..4 {
            let row = g.value(y).row(i);
            let mean: f64 = row.iter().sum::<f64>() / row.len() as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
            assert!(mean.abs() < 1e-9, "row {i} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "row {i} var {var}");
        }
    }

    #[test]
    fn shape_mismatch_names_the_op() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![1.0, 2.0]), false);
        let b = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]), false);
        match g.add(a, b) {
            Err(CecdrError::ShapeMismatch { op, detail }) => {
                assert_eq!(op, "add");
                assert!(detail.contains('3'));
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        assert!(matches!(g.backward(x), Err(CecdrError::NonScalarLoss { .. })));
    }

    #[test]
    fn dropout_is_deterministic_given_the_stream_and_identity_at_keep_one() {
        let t = Tensor::vector((0..64).map(|i| i as f64 / 7.0).collect());
        let run = || {
            let mut rng = stream(9, Stream::DcmmDropout, 5);
            let mut g = Graph::new();
            let x = g.leaf(t.clone(), false);
            let y = g.dropout(x, 0.8, &mut rng).unwrap();
            g.value(y).values().to_vec()
        };
        assert_eq!(run(), run());

        let mut rng = stream(9, Stream::DcmmDropout, 5);
        let mut g = Graph::new();
        let x = g.leaf(t.clone(), false);
        let y = g.dropout(x, 1.0, &mut rng).unwrap();
        assert_eq!(g.value(y).values(), t.values());
        // keep == 1 must not consume the stream
        let mut rng2 = stream(9, Stream::DcmmDropout, 5);
        assert_eq!(
            rand::Rng::random::<u64>(&mut rng),
            rand::Rng::random::<u64>(&mut rng2)
        );
    }

    #[test]
    fn gather_scatters_gradients_back_to_rows() {
        let mut g = Graph::new();
        let table = g.leaf(Tensor::matrix(3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), true);
        let rows = g.gather(table, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(rows).row(0), &[4.0, 5.0]);
        let loss = g.sum(rows).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(table).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn matmul_shapes_and_vector_promotions() {
        let mut g = Graph::new();
        let m = g.leaf(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap(), false);
        let v = g.leaf(Tensor::vector(vec![1., 0., -1.]), false);
        let mv = g.matmul(m, v).unwrap();
        assert_eq!(g.value(mv).shape(), &[2]);
        assert_eq!(g.value(mv).values(), &[-2.0, -2.0]);

        let u = g.leaf(Tensor::vector(vec![1., 2.]), false);
        let um = g.matmul(u, m).unwrap();
        assert_eq!(g.value(um).shape(), &[3]);
        assert_eq!(g.value(um).values(), &[9.0, 12.0, 15.0]);

        let dot = g.matmul(v, v).unwrap();
        assert_eq!(g.value(dot).shape(), &[1]);
        assert_eq!(g.value(dot).values(), &[2.0]);

        let nt = g.matmul_nt(m, m).unwrap();
        assert_eq!(g.value(nt).shape(), &[2, 2]);
        assert_eq!(g.value(nt).values(), &[14.0, 32.0, 32.0, 77.0]);
    }

    // ---- finite-difference oracle over every differentiable op ----------

    fn fd_points(tag: u64, n: usize) -> Vec<rand_chacha::ChaCha8Rng> {
        (0..n).map(|i| stream(tag, Stream::GradCheck, i as u64)).collect()
    }

    #[test]
    fn finite_difference_all_ops() {
        let points = 10;
        // (name, builder over fixed input shapes)
        for (tag, rngs) in [(101u64, fd_points(101, points))].into_iter() {
            let _ = tag;
            for (pi, mut rng) in rngs.into_iter().enumerate() {
                let pi = pi as u64;
                let a = gradcheck::random_tensor(vec![3, 4], -2.0, 2.0, &mut rng);
                let b = gradcheck::random_tensor(vec![3, 4], -2.0, 2.0, &mut rng);
                let row = gradcheck::random_tensor(vec![4], -2.0, 2.0, &mut rng);
                let sq = gradcheck::random_tensor(vec![3, 3], -2.0, 2.0, &mut rng);
                let m43 = gradcheck::random_tensor(vec![4, 3], -2.0, 2.0, &mut rng);
                let pos = gradcheck::random_tensor(vec![3, 4], 0.1, 3.0, &mut rng);
                let spread = gradcheck::random_tensor_spread(3, 4, 1e-2, &mut rng);
                let scalar = gradcheck::random_tensor(vec![1], -2.0, 2.0, &mut rng);
                // keep LeakyReLU inputs away from the kink
                let mut away = gradcheck::random_tensor(vec![3, 4], 0.05, 2.0, &mut rng);
                for (i, v) in away.values_mut().iter_mut().enumerate() {
                    if i % 2 == 0 {
                        *v = -*v;
                    }
                }

                gradcheck::check(&[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]), pi).unwrap();
                gradcheck::check(&[a.clone(), row.clone()], |g, v| g.add_row(v[0], v[1]), pi).unwrap();
                gradcheck::check(&[a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]), pi).unwrap();
                gradcheck::check(&[a.clone(), row.clone()], |g, v| g.mul_row(v[0], v[1]), pi).unwrap();
                gradcheck::check(&[a.clone(), scalar.clone()], |g, v| g.mul_scalar(v[0], v[1]), pi)
                    .unwrap();
                gradcheck::check(&[a.clone(), m43.clone()], |g, v| g.matmul(v[0], v[1]), pi).unwrap();
                gradcheck::check(&[a.clone(), b.clone()], |g, v| g.matmul_nt(v[0], v[1]), pi).unwrap();
                gradcheck::check(&[a.clone()], |g, v| g.row_sum(v[0]), pi).unwrap();
                gradcheck::check(&[a.clone()], |g, v| g.sum(v[0]), pi).unwrap();
                gradcheck::check(&[a.clone()], |g, v| g.scale(v[0], -1.7), pi).unwrap();
                gradcheck::check(&[a.clone()], |g, v| g.sigmoid(v[0]), pi).unwrap();
                gradcheck::check(&[pos.clone()], |g, v| g.log(v[0]), pi).unwrap();
                gradcheck::check(&[away.clone()], |g, v| g.leaky_relu(v[0]), pi).unwrap();
                gradcheck::check(&[a.clone()], |g, v| g.clamp(v[0], -5.0, 5.0), pi).unwrap();
                gradcheck::check(&[a.clone()], |g, v| g.softmax(v[0], false), pi).unwrap();
                gradcheck::check(&[sq.clone()], |g, v| g.softmax(v[0], true), pi).unwrap();
                gradcheck::check(&[a.clone()], |g, v| g.layer_norm(v[0]), pi).unwrap();
                gradcheck::check(&[a.clone()], |g, v| {
                    let mut drng = stream(7, Stream::DcmmDropout, 99);
                    g.dropout(v[0], 0.7, &mut drng)
                }, pi)
                .unwrap();
                gradcheck::check(&[a.clone()], |g, v| g.gather(v[0], &[2, 0, 1, 2]), pi).unwrap();
                gradcheck::check(&[spread.clone()], |g, v| g.max_pool_rows(v[0]), pi).unwrap();
                gradcheck::check(&[a.clone(), b.clone()], |g, v| g.concat_rows(&[v[0], v[1]]), pi)
                    .unwrap();
                gradcheck::check(&[a.clone(), b.clone()], |g, v| g.concat_cols(&[v[0], v[1]]), pi)
                    .unwrap();
                gradcheck::check(&[a.clone()], |g, v| g.select_row(v[0], 1), pi).unwrap();
            }
        }
    }

    #[test]
    fn forward_values_are_deterministic_across_runs() {
        let run = || {
            let mut rng = stream(11, Stream::GradCheck, 3);
            let t = gradcheck::random_tensor(vec![6, 6], -1.0, 1.0, &mut rng);
            let mut g = Graph::new();
            let x = g.leaf(t, true);
            let s = g.softmax(x, true).unwrap();
            let n = g.layer_norm(s).unwrap();
            let y = g.sigmoid(n).unwrap();
            let mut drng = stream(11, Stream::DcmmDropout, 4);
            let d = g.dropout(y, 0.9, &mut drng).unwrap();
            let loss = g.sum(d).unwrap();
            g.backward(loss).unwrap();
            (g.value(loss).values().to_vec(), g.grad(x).unwrap().to_vec())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
    }
}
