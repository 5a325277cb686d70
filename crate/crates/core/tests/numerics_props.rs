use std::rc::Rc;

use graphleak::numerics::{analytic_grads, compare_gradients, gradcheck, Tape, Tensor, Var};
use graphleak::Result;
use proptest::prelude::*;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn tensor(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Tensor::new(rows, cols, v).unwrap())
}

/// Values bounded away from zero, for kinked or singular primitives.
fn away_from_zero(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec((0.05f64..2.0, any::<bool>()), rows * cols).prop_map(move |v| {
        Tensor::new(rows, cols, v.into_iter().map(|(m, s)| if s { m } else { -m }).collect()).unwrap()
    })
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=8, 1usize..=8)
}

/// Contract an op's output against fixed weights so every output entry matters.
fn weighted<'t>(y: Var<'t>, w: &Tensor) -> Result<Var<'t>> {
    let wv = y.tape().constant(w.clone());
    y.mul(wv)?.sum()
}

fn weights_for(r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.55)
}

fn check_unary(x: Tensor, op: impl for<'t> Fn(Var<'t>) -> Result<Var<'t>>) -> Result<()> {
    let out_shape = {
        let tape = Tape::new();
        op(tape.constant(x.clone()))?.shape()
    };
    let w = weights_for(out_shape[0], out_shape[1]);
    let rep = gradcheck(|_t, v| weighted(op(v[0])?, &w), &[x], STEP, TOL);
    assert!(rep.passed, "{rep:?}");
    Ok(())
}

fn check_binary(a: Tensor, b: Tensor, op: impl for<'t> Fn(Var<'t>, Var<'t>) -> Result<Var<'t>>) -> Result<()> {
    let out_shape = {
        let tape = Tape::new();
        op(tape.constant(a.clone()), tape.constant(b.clone()))?.shape()
    };
    let w = weights_for(out_shape[0], out_shape[1]);
    let rep = gradcheck(|_t, v| weighted(op(v[0], v[1])?, &w), &[a, b], STEP, TOL);
    assert!(rep.passed, "{rep:?}");
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul_grad((m, k) in dims(), n in 1usize..=8, seed in any::<u64>()) {
        let a = Tensor::from_fn(m, k, |i, j| ((seed as usize + i * 31 + j * 17) % 11) as f64 / 5.0 - 1.0);
        let b = Tensor::from_fn(k, n, |i, j| ((seed as usize / 3 + i * 13 + j * 29) % 7) as f64 / 3.0 - 1.0);
        check_binary(a, b, |a, b| a.matmul(b)).unwrap();
    }

    #[test]
    fn transpose_grad(x in dims().prop_flat_map(|(r, c)| tensor(r, c, -2.0, 2.0))) {
        check_unary(x, |v| v.t()).unwrap();
    }

    #[test]
    fn add_sub_mul_grad(
        (a, b) in dims().prop_flat_map(|(r, c)| (tensor(r, c, -2.0, 2.0), tensor(r, c, -2.0, 2.0)))
    ) {
        check_binary(a.clone(), b.clone(), |a, b| a.add(b)).unwrap();
        check_binary(a.clone(), b.clone(), |a, b| a.sub(b)).unwrap();
        check_binary(a, b, |a, b| a.mul(b)).unwrap();
    }

    #[test]
    fn broadcast_row_col_scalar_grad(
        (a, r, c, s) in dims().prop_flat_map(|(m, n)| (
            tensor(m, n, -2.0, 2.0), tensor(1, n, -2.0, 2.0), tensor(m, 1, -2.0, 2.0), tensor(1, 1, -2.0, 2.0)
        ))
    ) {
        check_binary(a.clone(), r.clone(), |a, b| a.add(b)).unwrap();
        check_binary(a.clone(), c.clone(), |a, b| a.mul(b)).unwrap();
        check_binary(a.clone(), s, |a, b| a.sub(b)).unwrap();
        check_binary(r, c, |a, b| a.mul(b)).unwrap();
    }

    #[test]
    fn div_grad(
        (a, b) in dims().prop_flat_map(|(r, c)| (tensor(r, c, -2.0, 2.0), away_from_zero(r, c)))
    ) {
        check_binary(a, b, |a, b| a.div(b)).unwrap();
    }

    #[test]
    fn elementwise_smooth_grad(x in dims().prop_flat_map(|(r, c)| tensor(r, c, -3.0, 3.0))) {
        check_unary(x.clone(), |v| v.sigmoid()).unwrap();
        check_unary(x.clone(), |v| v.tanh()).unwrap();
        check_unary(x.clone(), |v| v.exp()).unwrap();
        check_unary(x.clone(), |v| v.scale(-1.7)).unwrap();
        check_unary(x, |v| v.add_scalar(0.3)).unwrap();
    }

    #[test]
    fn relu_grad(x in dims().prop_flat_map(|(r, c)| away_from_zero(r, c))) {
        check_unary(x, |v| v.relu()).unwrap();
    }

    #[test]
    fn log_powf_grad(x in dims().prop_flat_map(|(r, c)| tensor(r, c, 0.2, 3.0))) {
        check_unary(x.clone(), |v| v.ln()).unwrap();
        check_unary(x.clone(), |v| v.powf(-0.5)).unwrap();
        check_unary(x, |v| v.powf(2.5)).unwrap();
    }

    #[test]
    fn reductions_grad(x in dims().prop_flat_map(|(r, c)| tensor(r, c, -2.0, 2.0))) {
        check_unary(x.clone(), |v| v.sum()).unwrap();
        check_unary(x.clone(), |v| v.mean()).unwrap();
        check_unary(x.clone(), |v| v.col_sums()).unwrap();
        check_unary(x.clone(), |v| v.row_sums()).unwrap();
        check_unary(x, |v| v.row_means()).unwrap();
    }

    #[test]
    fn softmax_grad(x in dims().prop_flat_map(|(r, c)| tensor(r, c, -3.0, 3.0))) {
        check_unary(x.clone(), |v| v.softmax_rows()).unwrap();
        check_unary(x, |v| v.log_softmax_rows()).unwrap();
    }

    #[test]
    fn indexing_grad(
        (x, picks, rows) in dims().prop_flat_map(|(r, c)| (
            tensor(r, c, -2.0, 2.0),
            prop::collection::vec(0..c, r),
            prop::collection::vec(0..r, 1..=8),
        ))
    ) {
        check_unary(x.clone(), move |v| v.pick_cols(&picks)).unwrap();
        check_unary(x, move |v| v.gather_rows(&rows)).unwrap();
    }

    #[test]
    fn concat_slice_grad(
        (a, b, cut) in (1usize..=8, 1usize..=4, 1usize..=4).prop_flat_map(|(r, c1, c2)| (
            tensor(r, c1, -2.0, 2.0), tensor(r, c2, -2.0, 2.0), 0..c1
        ))
    ) {
        check_binary(a.clone(), b, |a, b| a.concat_cols(b)).unwrap();
        let c = a.cols();
        check_unary(a, move |v| v.slice_cols(cut, c)).unwrap();
    }

    #[test]
    fn edge_aggregate_grad(
        (x, w, edges) in (2usize..=8, 1usize..=5).prop_flat_map(|(n, f)| (
            tensor(n, f, -2.0, 2.0),
            tensor(6, 1, -1.5, 1.5),
            prop::collection::vec((0..n, 0..n), 6),
        ))
    ) {
        let n = x.rows();
        let src = Rc::new(edges.iter().map(|e| e.0).collect::<Vec<_>>());
        let dst = Rc::new(edges.iter().map(|e| e.1).collect::<Vec<_>>());
        check_binary(x, w, move |x, w| x.edge_aggregate(w, &src, &dst, n)).unwrap();
    }

    #[test]
    fn forward_is_bitwise_deterministic(x in dims().prop_flat_map(|(r, c)| tensor(r, c, -3.0, 3.0))) {
        let run = || {
            let tape = Tape::new();
            let v = tape.constant(x.clone());
            v.matmul(v.t().unwrap()).unwrap().softmax_rows().unwrap().tanh().unwrap().value()
        };
        prop_assert_eq!(run().data().to_vec(), run().data().to_vec());
    }
}

#[test]
fn quadratic_form_passes_gradcheck() {
    let q = Tensor::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.3 });
    let x = Tensor::col(vec![0.5, -1.0, 2.0, 0.25]);
    let rep = gradcheck(
        |t, v| {
            let qv = t.constant(q.clone());
            v[0].t()?.matmul(qv)?.matmul(v[0])?.sum()
        },
        &[x],
        STEP,
        TOL,
    );
    assert!(rep.passed, "{rep:?}");
}

fn mlp_loss<'t>(t: &'t Tape, v: &[Var<'t>]) -> Result<Var<'t>> {
    let x = t.constant(Tensor::from_fn(5, 3, |i, j| ((i * 3 + j) as f64).sin()));
    let h = x.matmul(v[0])?.add(v[1])?.tanh()?;
    let logits = h.matmul(v[2])?.add(v[3])?;
    logits.log_softmax_rows()?.pick_cols(&[0, 1, 2, 1, 0])?.mean()?.scale(-1.0)
}

fn mlp_params() -> Vec<Tensor> {
    vec![
        Tensor::from_fn(3, 4, |i, j| 0.4 * ((i + 2 * j) as f64).cos()),
        Tensor::from_fn(1, 4, |_, j| 0.1 * j as f64),
        Tensor::from_fn(4, 3, |i, j| 0.5 * ((3 * i + j) as f64).sin()),
        Tensor::zeros(1, 3),
    ]
}

#[test]
fn two_layer_mlp_cross_entropy_passes_gradcheck() {
    let rep = gradcheck(mlp_loss, &mlp_params(), STEP, TOL);
    assert!(rep.passed, "{rep:?}");
    assert_eq!(rep.checked, 12 + 4 + 12 + 3);
}

#[test]
fn corrupted_gradient_fails() {
    let params = mlp_params();
    let mut grads = analytic_grads(&mlp_loss, &params).unwrap();
    grads[0].data_mut()[0] += 0.1;
    let rep = compare_gradients(&mlp_loss, &params, &grads, STEP, TOL);
    assert!(!rep.passed);
    assert_eq!(rep.worst, Some((0, 0)));
}
