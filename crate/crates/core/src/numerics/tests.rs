use proptest::prelude::*;
use rand::Rng;

use super::gradcheck::{self, GradCheckReport};
use super::*;
use crate::error::{Error, Result};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random_tensor(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn store_of(tensors: Vec<Tensor>) -> ParamStore {
    let mut s = ParamStore::new();
    for (i, t) in tensors.into_iter().enumerate() {
        s.add(format!("p{i}"), t);
    }
    s
}

/// Reduces any tensor to a scalar through a fixed random projection so
/// every output element contributes a distinct weight.
fn project(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let t = g.value(v).clone();
    let mut rng = seeded_rng(seed, 99);
    let w = g.constant(random_tensor(&mut rng, t.rows(), t.cols()));
    let prod = g.mul(v, w)?;
    Ok(g.sum(prod))
}

fn check_op<F>(seed: u64, shapes: &[(usize, usize)], op: F) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = seeded_rng(seed, 1);
    let params = store_of(shapes.iter().map(|&(r, c)| random_tensor(&mut rng, r, c)).collect());
    gradcheck::check(&params, H, None, |p| {
        let mut g = Graph::new();
        let b = g.bind(p, true);
        let ids: Vec<Var> = (0..p.len()).map(|i| b.var(p.id(&format!("p{i}")).unwrap())).collect();
        let out = op(&mut g, &ids)?;
        let loss = project(&mut g, out, seed)?;
        Ok((g, loss, b))
    })
    .unwrap()
}

#[test]
fn matmul_shape_algebra() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(2, 3));
    let b = g.constant(Tensor::zeros(3, 1));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).shape(), [2, 1]);
}

#[test]
fn shape_errors_name_both_operands() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(2, 3));
    let b = g.constant(Tensor::zeros(2, 3));
    let msg = g.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.matches("[2, 3]").count() == 2, "{msg}");
    let c = g.constant(Tensor::zeros(4, 1));
    assert!(matches!(g.add(a, c), Err(Error::Shape(_))));
}

#[test]
fn sigmoid_at_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(0.0));
    let y = g.sigmoid(x);
    assert_eq!(g.value(y).item(), 0.5);
}

#[test]
fn derivative_of_square() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(3.0), true);
    let y = g.mul(x, x).unwrap();
    let grads = g.backward_scalar(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 6.0);
}

#[test]
fn gradient_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::row(vec![0.3, -2.0, 5.0, 1.0]), true);
    let s = g.sum(x);
    let grads = g.backward_scalar(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0; 4]);
}

#[test]
fn backward_without_forward_record_is_state_error() {
    let mut full = Graph::new();
    let x = full.leaf(Tensor::scalar(1.0), true);
    let _ = full.mul(x, x).unwrap();
    let y = full.sum(x);
    let empty = Graph::new();
    assert!(matches!(empty.backward_scalar(y), Err(Error::State(_))));
}

#[test]
fn seed_shape_must_match_output() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::row(vec![1.0, 2.0]), true);
    let y = g.tanh(x);
    assert!(matches!(g.backward(y, &Tensor::scalar(1.0)), Err(Error::Shape(_))));
}

#[test]
fn cross_entropy_of_uniform_logits_is_ln_v() {
    let mut g = Graph::new();
    let logits = g.constant(Tensor::zeros(3, 7));
    let ce = g.cross_entropy(logits, &[0, 3, 6]).unwrap();
    assert!((g.value(ce).item() - 7f64.ln()).abs() < 1e-12);
}

#[test]
fn every_op_matches_finite_differences() {
    type OpFn = fn(&mut Graph, &[Var]) -> Result<Var>;
    let cases: Vec<(&str, Vec<(usize, usize)>, OpFn)> = vec![
        ("matmul", vec![(2, 3), (3, 4)], |g, v| g.matmul(v[0], v[1])),
        ("matmul_nt", vec![(2, 3), (4, 3)], |g, v| g.matmul_nt(v[0], v[1])),
        ("add", vec![(3, 4), (3, 4)], |g, v| g.add(v[0], v[1])),
        ("add_row", vec![(3, 4), (1, 4)], |g, v| g.add(v[0], v[1])),
        ("add_scalar", vec![(3, 4), (1, 1)], |g, v| g.add(v[0], v[1])),
        ("mul", vec![(3, 4), (3, 4)], |g, v| g.mul(v[0], v[1])),
        ("mul_row", vec![(3, 4), (1, 4)], |g, v| g.mul(v[0], v[1])),
        ("mul_scalar", vec![(3, 4), (1, 1)], |g, v| g.mul(v[0], v[1])),
        ("concat_rows", vec![(2, 3), (1, 3)], |g, v| g.concat(&[v[0], v[1]], Axis::Rows)),
        ("concat_cols", vec![(2, 3), (2, 1)], |g, v| g.concat(&[v[0], v[1]], Axis::Cols)),
        ("slice_rows", vec![(4, 3)], |g, v| g.slice(v[0], Axis::Rows, 1, 3)),
        ("slice_cols", vec![(4, 3)], |g, v| g.slice(v[0], Axis::Cols, 1, 2)),
        ("reshape", vec![(4, 3)], |g, v| g.reshape(v[0], 2, 6)),
        ("embedding", vec![(5, 3)], |g, v| g.embedding(v[0], &[4, 0, 4, 2])),
        ("sigmoid", vec![(3, 3)], |g, v| Ok(g.sigmoid(v[0]))),
        ("tanh", vec![(3, 3)], |g, v| Ok(g.tanh(v[0]))),
        ("leaky_relu", vec![(3, 3)], |g, v| Ok(g.leaky_relu(v[0], 0.2))),
        ("softmax", vec![(3, 4)], |g, v| Ok(g.softmax(v[0]))),
        ("log_softmax", vec![(3, 4)], |g, v| Ok(g.log_softmax(v[0]))),
        ("cross_entropy", vec![(3, 5)], |g, v| g.cross_entropy(v[0], &[1, 4, 0])),
        ("squared_error", vec![(3, 2), (3, 2)], |g, v| g.squared_error(v[0], v[1])),
        ("sum", vec![(2, 3)], |g, v| Ok(g.sum(v[0]))),
    ];
    for seed in 0..20u64 {
        for (name, shapes, op) in &cases {
            let r = check_op(seed, shapes, op);
            assert!(
                r.max_rel_error < TOL,
                "{name} seed {seed}: max relative error {:e}",
                r.max_rel_error
            );
        }
    }
}

/// Three dense layers with tanh, LReLU and softmax cross-entropy.
fn three_layer_loss(p: &ParamStore) -> Result<(Graph, Var, Bound)> {
    let mut g = Graph::new();
    let b = g.bind(p, true);
    let id = |n: &str| b.var(p.id(n).unwrap());
    let x = g.constant(Tensor::new(2, 4, vec![0.5, -1.0, 0.25, 2.0, -0.3, 0.8, 1.1, -0.7]).unwrap());
    let h1 = g.matmul(x, id("w1"))?;
    let h1 = g.add(h1, id("b1"))?;
    let h1 = g.tanh(h1);
    let h2 = g.matmul(h1, id("w2"))?;
    let h2 = g.leaky_relu(h2, 0.1);
    let o = g.matmul(h2, id("w3"))?;
    let loss = g.cross_entropy(o, &[2, 0])?;
    Ok((g, loss, b))
}

#[test]
fn three_layer_network_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = seeded_rng(seed, 7);
        let mut p = ParamStore::new();
        p.add("w1", random_tensor(&mut rng, 4, 5));
        p.add("b1", random_tensor(&mut rng, 1, 5));
        p.add("w2", random_tensor(&mut rng, 5, 4));
        p.add("w3", random_tensor(&mut rng, 4, 3));
        let r = gradcheck::check(&p, H, None, three_layer_loss).unwrap();
        assert!(r.max_rel_error < TOL, "seed {seed}: {r:?}");
    }
}

#[test]
fn shared_subexpression_accumulates_like_expanded_graph() {
    let a0 = Tensor::row(vec![0.3, -1.2, 0.7]);
    let b0 = Tensor::row(vec![1.5, 0.4, -0.9]);

    let mut shared = Graph::new();
    let a = shared.leaf(a0.clone(), true);
    let b = shared.leaf(b0.clone(), true);
    let ab = shared.mul(a, b).unwrap();
    let t = shared.tanh(ab);
    let s = shared.add(ab, t).unwrap();
    let out = shared.sum(s);
    let gs = shared.backward_scalar(out).unwrap();

    let mut expanded = Graph::new();
    let a2 = expanded.leaf(a0, true);
    let b2 = expanded.leaf(b0, true);
    let ab1 = expanded.mul(a2, b2).unwrap();
    let ab2 = expanded.mul(a2, b2).unwrap();
    let t2 = expanded.tanh(ab2);
    let s2 = expanded.add(ab1, t2).unwrap();
    let out2 = expanded.sum(s2);
    let ge = expanded.backward_scalar(out2).unwrap();

    for (x, y) in [(a, a2), (b, b2)] {
        for (u, v) in gs.get(x).unwrap().data().iter().zip(ge.get(y).unwrap().data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn non_trainable_leaves_receive_no_gradient() {
    let mut g = Graph::new();
    let w = g.leaf(Tensor::scalar(2.0), false);
    let x = g.leaf(Tensor::scalar(3.0), true);
    let y = g.mul(w, x).unwrap();
    let grads = g.backward_scalar(y).unwrap();
    assert!(grads.get(w).is_none());
    assert_eq!(grads.get(x).unwrap().item(), 2.0);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        values in proptest::collection::vec(-50.0f64..50.0, 1..24),
        cols in 1usize..6,
    ) {
        let rows = values.len().div_ceil(cols);
        let mut data = values;
        data.resize(rows * cols, 0.0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(rows, cols, data).unwrap());
        let y = g.softmax(x);
        let t = g.value(y);
        for r in 0..rows {
            let row = t.row_slice(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
