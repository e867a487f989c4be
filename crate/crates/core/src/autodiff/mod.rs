//! Minimal reverse-mode automatic differentiation over `f64` tensors.
//!
//! Models keep their weights in a [`ParamStore`]. Each forward pass builds a
//! fresh [`Graph`], binds parameters into it with [`Graph::param`], and after
//! [`Graph::backward`] the gradients are written back with
//! [`Graph::write_param_grads`] for the optimizer to consume.
//!
//! Graphs are single-threaded; confine each to the thread that built it.

mod gemm;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, FD_STEP};
pub use graph::{Gradients, Graph, OpKind, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

pub(crate) use graph::{sigmoid, softmax_in_place};

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let y = g.softmax_rows(x).unwrap();
        approx(g.value(y), &[0.5, 0.5]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut g = Graph::new();
        let x = g.constant(vec![2], vec![-1.0, 2.0]).unwrap();
        let y = g.relu(x).unwrap();
        approx(g.value(y), &[0.0, 2.0]);
    }

    #[test]
    fn matmul_hand_example() {
        let mut g = Graph::new();
        let a = g.constant(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = g.constant(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[1, 1]);
        approx(g.value(c), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = g.constant(vec![3, 1], vec![3.0, 4.0, 5.0]).unwrap();
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("matmul") && msg.contains("[1, 2]") && msg.contains("[3, 1]"), "{msg}");
    }

    #[test]
    fn grad_of_sum_squares() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::parameter(vec![1], vec![3.0]).unwrap());
        let l = g.sum_squares(x).unwrap();
        let grads = g.backward(l).unwrap();
        approx(grads.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn grad_of_mean_relu() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::parameter(vec![2], vec![-1.0, 4.0]).unwrap());
        let r = g.relu(x).unwrap();
        let l = g.mean(r).unwrap();
        let grads = g.backward(l).unwrap();
        approx(grads.get(x).unwrap(), &[0.0, 0.5]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::parameter(vec![2], vec![1.0, 2.0]).unwrap());
        let y = g.exp(x).unwrap();
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn reused_tensor_accumulates_both_paths() {
        // l = sum(x * x) + sum(x) -> dl/dx = 2x + 1
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::parameter(vec![2], vec![1.5, -2.0]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let a = g.sum(sq).unwrap();
        let b = g.sum(x).unwrap();
        let l = g.add(a, b).unwrap();
        let grads = g.backward(l).unwrap();
        approx(grads.get(x).unwrap(), &[4.0, -3.0]);
    }

    #[test]
    fn non_finite_values_are_reported() {
        let mut g = Graph::new();
        let x = g.constant(vec![1], vec![1000.0]).unwrap();
        let err = g.exp(x).unwrap_err();
        if cfg!(debug_assertions) {
            assert!(matches!(err, crate::Error::NonFinite { op: "exp" }));
        }
    }

    #[test]
    fn broadcast_bias_gradient_sums_over_rows() {
        let mut g = Graph::new();
        let x = g.constant(vec![3, 2], vec![1.0; 6]).unwrap();
        let b = g.leaf(&Tensor::parameter(vec![2], vec![0.0, 0.0]).unwrap());
        let y = g.add(x, b).unwrap();
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        approx(grads.get(b).unwrap(), &[3.0, 3.0]);
    }
}
