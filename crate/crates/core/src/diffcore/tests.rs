use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Array::new(shape.to_vec(), data).unwrap()
}

/// Builds `sum(weights * f(inputs))` so every output element contributes.
type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>;

fn contract(tape: &mut Tape, y: Var, rng: &mut ChaCha8Rng) -> Var {
    let w = random(rng, tape.shape(y), -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(y, w).unwrap();
    tape.sum(p).unwrap()
}

/// Max relative error between reverse-mode and central differences.
fn fd_check(inputs: &[Array], build: &Build, seed: u64) -> f64 {
    let eval = |vals: &[Array], want_grad: bool| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|a| tape.leaf(a.clone())).collect();
        let y = build(&mut tape, &vars).unwrap();
        let s = contract(&mut tape, y, &mut rng);
        let f = tape.value(s).item();
        let g = if want_grad {
            tape.gradient(s, &vars).unwrap()
        } else {
            Vec::new()
        };
        (f, g)
    };
    let (_, grads) = eval(inputs, true);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        for idx in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[idx] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[idx] -= h;
            let fd = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * h);
            let ad = grads[k].data()[idx];
            let err = (fd - ad).abs() / ad.abs().max(fd.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

fn check(name: &str, inputs: Vec<Array>, build: &Build) {
    let err = fd_check(&inputs, build, 7);
    assert!(err < 1e-6, "{name}: relative error {err:e}");
}

#[test]
fn add_and_segment_sum_examples() {
    let mut t = Tape::new();
    let a = t.constant(Array::vector(vec![1.0, 2.0]));
    let b = t.constant(Array::vector(vec![3.0, 4.0]));
    let c = t.add(a, b).unwrap();
    assert_eq!(t.value(c).data(), &[4.0, 6.0]);

    let v = t.constant(Array::vector(vec![1.0, 2.0, 3.0]));
    let s = t.segment_sum(v, Arc::from(vec![0, 0, 1]), 2).unwrap();
    assert_eq!(t.value(s).data(), &[3.0, 3.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[2, 3], -1.0, 1.0);
    let b = random(&mut rng, &[3, 2], -1.0, 1.0);
    let mut oracle = [0.0; 4];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..3 {
                oracle[i * 2 + j] += a.data()[i * 3 + k] * b.data()[k * 2 + j];
            }
        }
    }
    let mut t = Tape::new();
    let (x, y) = (t.constant(a.clone()), t.constant(b.clone()));
    let c = t.matmul(x, y).unwrap();
    for (p, q) in t.value(c).data().iter().zip(oracle) {
        assert!((p - q).abs() < 1e-12);
    }
    // transposed operand layouts agree with the plain product
    let at = transpose(&a);
    let bt = transpose(&b);
    let (xt, yt) = (t.constant(at), t.constant(bt));
    let c2 = t.matmul_t(xt, yt, true, true).unwrap();
    for (p, q) in t.value(c2).data().iter().zip(oracle) {
        assert!((p - q).abs() < 1e-12);
    }
}

fn transpose(a: &Array) -> Array {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let mut d = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            d[j * r + i] = a.data()[i * c + j];
        }
    }
    Array::new(vec![c, r], d).unwrap()
}

#[test]
fn shape_mismatch_names_primitive() {
    let mut t = Tape::new();
    let a = t.constant(Array::zeros(&[2, 3]));
    let b = t.constant(Array::zeros(&[2, 2]));
    match t.matmul(a, b) {
        Err(DiffError::ShapeMismatch { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 2]);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(t.add(a, b), Err(DiffError::ShapeMismatch { op: "add", .. })));
}

#[test]
fn analytic_gradients() {
    let mut t = Tape::new();
    let x = t.leaf(Array::scalar(3.0));
    let y = t.square(x).unwrap();
    assert_eq!(t.gradient(y, &[x]).unwrap()[0].item(), 6.0);

    let mut t = Tape::new();
    let x = t.leaf(Array::vector(vec![0.3, -1.0, 2.0, 5.0, 0.0]));
    let s = t.sum(x).unwrap();
    assert_eq!(t.gradient(s, &[x]).unwrap()[0].data(), &[1.0; 5]);
}

#[test]
fn non_scalar_output_is_an_error() {
    let mut t = Tape::new();
    let x = t.leaf(Array::vector(vec![1.0, 2.0]));
    let y = t.scale(x, 2.0).unwrap();
    assert!(matches!(t.gradient(y, &[x]), Err(DiffError::NonScalarOutput(_))));
}

#[test]
fn detached_and_constant_inputs_get_zero_gradients() {
    let mut t = Tape::new();
    let x = t.leaf(Array::vector(vec![1.0, 2.0]));
    let unused = t.leaf(Array::vector(vec![4.0, 5.0, 6.0]));
    let c = t.constant(Array::vector(vec![1.0, 1.0]));
    let p = t.mul(x, c).unwrap();
    let s = t.sum(p).unwrap();
    let g = t.gradient(s, &[unused, c, x]).unwrap();
    assert_eq!(g[0].data(), &[0.0; 3]);
    assert_eq!(g[1].data(), &[0.0; 2]);
    assert_eq!(g[2].data(), &[1.0, 1.0]);

    let mut t = Tape::new();
    let x = t.leaf(Array::vector(vec![1.0, 2.0]));
    let k = t.constant(Array::scalar(3.0));
    let k2 = t.square(k).unwrap();
    assert_eq!(t.gradient(k2, &[x]).unwrap()[0].data(), &[0.0, 0.0]);
}

#[test]
fn non_finite_reports_first_offending_op() {
    let mut t = Tape::new();
    let x = t.leaf(Array::vector(vec![-1.0]));
    let err = t.sqrt(x).unwrap_err();
    assert_eq!(err, DiffError::NonFinite { op: "sqrt", node: 1 });
}

#[test]
fn two_layer_perceptron_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![
        random(&mut rng, &[1, 10], -1.0, 1.0),
        random(&mut rng, &[10, 8], -0.5, 0.5),
        random(&mut rng, &[8], -0.1, 0.1),
        random(&mut rng, &[8, 1], -0.5, 0.5),
    ];
    check("mlp", inputs, &|t, v| {
        let z = t.matmul(v[0], v[1])?;
        let z = t.add_row(z, v[2])?;
        let z = t.tanh(z)?;
        t.matmul(z, v[3])
    });
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut r = |shape: &[usize], lo: f64, hi: f64| random(&mut rng, shape, lo, hi);

    check("add", vec![r(&[3, 2], -1.0, 1.0), r(&[3, 2], -1.0, 1.0)], &|t, v| t.add(v[0], v[1]));
    check("sub", vec![r(&[4], -1.0, 1.0), r(&[4], -1.0, 1.0)], &|t, v| t.sub(v[0], v[1]));
    check("mul", vec![r(&[4], -1.0, 1.0), r(&[4], -1.0, 1.0)], &|t, v| t.mul(v[0], v[1]));
    check("div", vec![r(&[4], -1.0, 1.0), r(&[4], 0.5, 2.0)], &|t, v| t.div(v[0], v[1]));
    check("scale", vec![r(&[3], -1.0, 1.0)], &|t, v| t.scale(v[0], -2.5));
    check("offset", vec![r(&[3], -1.0, 1.0)], &|t, v| t.offset(v[0], 0.7));
    for f in [
        Unary::Exp,
        Unary::Sin,
        Unary::Cos,
        Unary::Tanh,
        Unary::Square,
        Unary::Powi(3),
        Unary::Sigmoid,
        Unary::Silu,
    ] {
        check(f.name(), vec![r(&[6], -2.0, 2.0)], &move |t, v| t.unary(v[0], f));
    }
    for f in [Unary::Sqrt, Unary::Recip, Unary::Abs, Unary::Powi(-2)] {
        check(f.name(), vec![r(&[6], 0.3, 2.0)], &move |t, v| t.unary(v[0], f));
    }
    let sw = Unary::Switch { on: 1.0, off: 3.0 };
    check("switch", vec![r(&[8], 1.05, 2.95)], &move |t, v| t.unary(v[0], sw));
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta { r(&[3, 2], -1.0, 1.0) } else { r(&[2, 3], -1.0, 1.0) };
        let b = if tb { r(&[4, 3], -1.0, 1.0) } else { r(&[3, 4], -1.0, 1.0) };
        check("matmul", vec![a, b], &move |t, v| t.matmul_t(v[0], v[1], ta, tb));
    }
    check("sum", vec![r(&[5], -1.0, 1.0)], &|t, v| t.sum(v[0]));
    check("sum_sorted", vec![r(&[5], -1.0, 1.0)], &|t, v| t.sum_sorted(v[0]));
    check("broadcast_rows", vec![r(&[3], -1.0, 1.0)], &|t, v| t.broadcast_rows(v[0], 4));
    check("broadcast_cols", vec![r(&[3], -1.0, 1.0)], &|t, v| t.broadcast_cols(v[0], 4));
    check("concat_cols", vec![r(&[3, 2], -1.0, 1.0), r(&[3, 1], -1.0, 1.0)], &|t, v| {
        t.concat_cols(&[v[0], v[1], v[0]])
    });
    check("slice_cols", vec![r(&[3, 5], -1.0, 1.0)], &|t, v| t.slice_cols(v[0], 1, 4));
    check("concat_rows", vec![r(&[2, 3], -1.0, 1.0), r(&[1, 3], -1.0, 1.0)], &|t, v| {
        t.concat_rows(&[v[0], v[1]])
    });
    check("gather", vec![r(&[4, 2], -1.0, 1.0)], &|t, v| t.gather(v[0], Arc::from(vec![3, 0, 3, 2])));
    check("segment_sum", vec![r(&[5, 2], -1.0, 1.0)], &|t, v| {
        t.segment_sum(v[0], Arc::from(vec![1, 0, 1, 2, 1]), 4)
    });
    check("norm", vec![r(&[4, 3], 0.2, 1.0)], &|t, v| t.norm(v[0]));
    check("dot", vec![r(&[4, 3], -1.0, 1.0), r(&[4, 3], -1.0, 1.0)], &|t, v| t.dot(v[0], v[1]));
    check("cross", vec![r(&[4, 3], -1.0, 1.0), r(&[4, 3], -1.0, 1.0)], &|t, v| t.cross(v[0], v[1]));
    check("softmax", vec![r(&[3, 4], -2.0, 2.0)], &|t, v| t.softmax(v[0]));
    check("layer_norm", vec![r(&[3, 5], -2.0, 2.0)], &|t, v| t.layer_norm(v[0], 1e-5));
    check("rope", vec![r(&[3, 6], -1.0, 1.0), r(&[3, 3], -3.0, 3.0)], &|t, v| t.rope(v[0], v[1]));
    check("vec_dot", vec![r(&[3, 3], -1.0, 1.0), r(&[3, 12], -1.0, 1.0)], &|t, v| t.vec_dot(v[0], v[1]));
    check("vec_outer", vec![r(&[3, 3], -1.0, 1.0), r(&[3, 4], -1.0, 1.0)], &|t, v| {
        t.vec_outer(v[0], v[1])
    });
    check("channel_scale", vec![r(&[3, 12], -1.0, 1.0), r(&[3, 4], -1.0, 1.0)], &|t, v| {
        t.channel_scale(v[0], v[1])
    });
    check("reshape", vec![r(&[2, 6], -1.0, 1.0)], &|t, v| t.reshape(v[0], vec![3, 4]));
    check("mul_col", vec![r(&[3, 2], -1.0, 1.0), r(&[3], -1.0, 1.0)], &|t, v| t.mul_col(v[0], v[1]));
    check("div_col", vec![r(&[3, 2], -1.0, 1.0), r(&[3], 0.5, 1.5)], &|t, v| t.div_col(v[0], v[1]));
    check("mul_row", vec![r(&[3, 2], -1.0, 1.0), r(&[2], -1.0, 1.0)], &|t, v| t.mul_row(v[0], v[1]));
    check("add_row", vec![r(&[3, 2], -1.0, 1.0), r(&[2], -1.0, 1.0)], &|t, v| t.add_row(v[0], v[1]));
}

#[test]
fn norm_gradient_at_zero_is_zero() {
    let mut t = Tape::new();
    let x = t.leaf(Array::zeros(&[1, 3]));
    let n = t.norm(x).unwrap();
    let s = t.sum(n).unwrap();
    assert_eq!(t.gradient(s, &[x]).unwrap()[0].data(), &[0.0; 3]);
}

#[test]
fn rope_preserves_pair_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[4, 8], -2.0, 2.0);
    let a = random(&mut rng, &[4, 4], -10.0, 10.0);
    let mut t = Tape::new();
    let (xv, av) = (t.constant(x.clone()), t.constant(a));
    let y = t.rope(xv, av).unwrap();
    for (p, q) in x.data().chunks(2).zip(t.value(y).data().chunks(2)) {
        let (n0, n1) = (p[0].hypot(p[1]), q[0].hypot(q[1]));
        assert!((n0 - n1).abs() < 1e-12);
    }
}

mod properties {
    use proptest::prelude::*;

    use super::super::*;

    fn grad_of(values: &[f64], build: impl Fn(&mut Tape, Var) -> Var) -> Vec<f64> {
        let mut t = Tape::new();
        let x = t.leaf(Array::vector(values.to_vec()));
        let y = build(&mut t, x);
        t.gradient(y, &[x]).unwrap().remove(0).into_data()
    }

    fn f(t: &mut Tape, x: Var) -> Var {
        let s = t.sin(x).unwrap();
        let p = t.mul(s, x).unwrap();
        t.sum(p).unwrap()
    }

    fn g(t: &mut Tape, x: Var) -> Var {
        let e = t.exp(x).unwrap();
        let q = t.square(e).unwrap();
        t.sum(q).unwrap()
    }

    proptest! {
        #[test]
        fn gradient_is_linear(
            xs in proptest::collection::vec(-1.5f64..1.5, 1..6),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let combined = grad_of(&xs, |t, x| {
                let fx = f(t, x);
                let gx = g(t, x);
                let fa = t.scale(fx, a).unwrap();
                let gb = t.scale(gx, b).unwrap();
                t.add(fa, gb).unwrap()
            });
            let gf = grad_of(&xs, f);
            let gg = grad_of(&xs, g);
            for i in 0..xs.len() {
                let expect = a * gf[i] + b * gg[i];
                prop_assert!((combined[i] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }

        #[test]
        fn constant_output_has_zero_gradient(xs in proptest::collection::vec(-5.0f64..5.0, 1..6)) {
            let grad = grad_of(&xs, |t, _x| {
                let c = t.constant(Array::scalar(2.0));
                t.exp(c).unwrap()
            });
            prop_assert!(grad.iter().all(|&v| v == 0.0));
        }
    }
}
