//! Dense reverse-mode automatic differentiation.

mod array;
pub mod checkpoint;
mod optim;
mod params;
mod sparse;
mod tape;

pub use array::DenseArray;
pub use optim::{optimizer_step, AdamConfig};
pub use params::{Parameter, ParameterStore};
pub use sparse::{Segments, SparseMatrix};
pub use tape::{CompNode, Elementwise, Op, Tape, Var};

pub(crate) use tape::{attention_weights, softmax_in_place};

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity_and_projection() {
        let mut t = Tape::new();
        let i2 = t.leaf(DenseArray::identity(2));
        let m = t.leaf(DenseArray::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let out = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let p = t.leaf(DenseArray::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]));
        let x = t.leaf(DenseArray::from_rows(&[vec![5.0], vec![7.0]]));
        let out = t.matmul(p, x).unwrap();
        assert_eq!(t.value(out).data(), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_structured() {
        let mut t = Tape::new();
        let a = t.leaf(DenseArray::zeros(2, 3));
        let b = t.leaf(DenseArray::zeros(2, 3));
        assert!(matches!(t.matmul(a, b), Err(crate::GdgmError::Dimension { .. })));
    }

    #[test]
    fn sigmoid_and_leaky_values() {
        let mut t = Tape::new();
        let x = t.leaf(DenseArray::scalar(0.0));
        let s = t.sigmoid(x);
        assert_eq!(t.value(s).item(), 0.5);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 0.25);

        let y = t.leaf(DenseArray::scalar(-2.0));
        let l = t.leaky_relu(y, 0.01);
        assert!(close(t.value(l).item(), -0.02, 1e-15));
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let a = t.leaf(DenseArray::row(vec![0.0, 0.0]));
        let s = t.softmax(a, 1).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, 0.5]);

        let b = t.leaf(DenseArray::row(vec![1000.0, 0.0]));
        let s = t.softmax(b, 1).unwrap();
        assert!(t.value(s).is_finite());
        assert!(close(t.value(s).data()[0], 1.0, 1e-15));
        assert!(t.value(s).data()[1] < 1e-300 || t.value(s).data()[1] == 0.0);

        let c = t.leaf(DenseArray::row(vec![1.0, 2.0, 3.0]));
        let s = t.softmax(c, 1).unwrap();
        // e^x / sum e^x evaluated directly
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        let expect = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
        for (got, want) in t.value(s).data().iter().zip(expect) {
            assert!(close(*got, want, 1e-15));
        }
        assert!(close(expect[0], 0.09003, 1e-5) && close(expect[1], 0.24473, 1e-5) && close(expect[2], 0.66524, 1e-5));
    }

    #[test]
    fn softmax_empty_input_errors() {
        let mut t = Tape::new();
        let e = t.leaf(DenseArray::zeros(0, 0));
        assert!(t.softmax(e, 1).is_err());
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(DenseArray::scalar(3.0));
        let sq = t.mul(x, x).unwrap();
        t.backward(sq).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(DenseArray::row(vec![1.0, 2.0]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn repeated_backward_accumulates_in_store() {
        let mut store = ParameterStore::new();
        store.insert("w", DenseArray::row(vec![1.5, -0.5])).unwrap();
        let mut t = Tape::new();
        let w = t.param(&store, "w").unwrap();
        let sq = t.mul(w, w).unwrap();
        let loss = t.sum(sq);
        t.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[3.0, -1.0]);
        t.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[6.0, -2.0]);
        store.zero_grad();
        assert_eq!(store.grad("w").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn elementwise_dispatch_checks_arity() {
        let mut t = Tape::new();
        let x = t.leaf(DenseArray::scalar(1.0));
        assert!(t.elementwise(Elementwise::Add, &[x]).is_err());
        let y = t.elementwise(Elementwise::Tanh, &[x]).unwrap();
        assert!(close(t.value(y).item(), 1f64.tanh(), 1e-15));
    }

    #[test]
    fn large_inputs_stay_finite() {
        let mut t = Tape::new();
        let x = t.leaf(DenseArray::row(vec![1e3, -1e3, 500.0]));
        let s = t.sigmoid(x);
        let th = t.tanh(x);
        let sm = t.softmax(x, 1).unwrap();
        let lg = t.log(s, 1e-12);
        for v in [s, th, sm, lg] {
            assert!(t.value(v).is_finite());
        }
    }
}
