//! Finite-difference checks for every differentiable op, run in f64 over
//! five seeds at rel tolerance 1e-3.

use lwtf_core::gradcheck::gradcheck;
use lwtf_core::rng;
use lwtf_core::tape::{Tape, Var};
use lwtf_core::tensor::Tensor;
use lwtf_core::Result;
use rand::Rng;

const TOL: f64 = 1e-3;
const SEEDS: u64 = 5;

fn randt(rng: &mut rng::Prng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Run one named check over the standard seeds.
fn check<F>(name: &str, shapes: &[(&[usize], f64, f64)], f: F)
where
    F: for<'a> Fn(&'a Tape<f64>, &[Var<'a, f64>]) -> Result<Var<'a, f64>>,
{
    for seed in 0..SEEDS {
        let mut rng = rng::seeded(1000 + seed);
        let inputs: Vec<Tensor<f64>> = shapes
            .iter()
            .map(|(s, lo, hi)| randt(&mut rng, s, *lo, *hi))
            .collect();
        if let Err(e) = gradcheck(&f, &inputs, TOL) {
            panic!("gradcheck '{name}' failed at seed {seed}: {e}");
        }
    }
}

#[test]
fn elementwise_unary_ops() {
    let shape: &[usize] = &[2, 3];
    // Keep inputs away from kinks (relu/abs at 0, clamp edges).
    check("relu", &[(shape, 0.1, 1.0)], |_, v| v[0].relu()?.sum_all());
    check("relu_neg", &[(shape, -1.0, -0.1)], |_, v| v[0].relu()?.sum_all());
    check("leaky_relu", &[(shape, -1.0, -0.1)], |_, v| {
        v[0].leaky_relu(0.2)?.sum_all()
    });
    check("sigmoid", &[(shape, -2.0, 2.0)], |_, v| v[0].sigmoid()?.sum_all());
    check("tanh", &[(shape, -2.0, 2.0)], |_, v| v[0].tanh()?.sum_all());
    check("log", &[(shape, 0.5, 2.0)], |_, v| v[0].log()?.sum_all());
    check("softplus", &[(shape, -2.0, 2.0)], |_, v| v[0].softplus()?.sum_all());
    check("abs", &[(shape, 0.2, 1.0)], |_, v| v[0].abs()?.sum_all());
    check("square", &[(shape, -1.0, 1.0)], |_, v| v[0].square()?.sum_all());
    check("sqrt", &[(shape, 0.5, 2.0)], |_, v| v[0].sqrt()?.sum_all());
    check("neg", &[(shape, -1.0, 1.0)], |_, v| v[0].neg()?.sum_all());
    check("clamp_interior", &[(shape, -0.4, 0.4)], |_, v| {
        v[0].clamp(-0.5, 0.5)?.sum_all()
    });
    check("scale", &[(shape, -1.0, 1.0)], |_, v| v[0].scale(2.5)?.sum_all());
    check("add_scalar", &[(shape, -1.0, 1.0)], |_, v| {
        v[0].add_scalar(0.7)?.sum_all()
    });
}

#[test]
fn relu_gradient_sign_cases() {
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::new([3], vec![2.0, -3.0, 0.0]).unwrap());
    let y = x.relu().unwrap().sum_all().unwrap();
    let grads = tape.backward(y).unwrap();
    let g = grads.get(x).unwrap();
    assert_eq!(g.data(), &[1.0, 0.0, 0.0]); // subgradient 0 at exactly 0
}

#[test]
fn elementwise_binary_ops() {
    let shape: &[usize] = &[2, 3];
    check("add", &[(shape, -1.0, 1.0), (shape, -1.0, 1.0)], |_, v| {
        v[0].add(v[1])?.sum_all()
    });
    check("sub", &[(shape, -1.0, 1.0), (shape, -1.0, 1.0)], |_, v| {
        v[0].sub(v[1])?.square()?.sum_all()
    });
    check("mul", &[(shape, -1.0, 1.0), (shape, -1.0, 1.0)], |_, v| {
        v[0].mul(v[1])?.sum_all()
    });
    check("mul_scalar_broadcast", &[(shape, -1.0, 1.0), (&[], 0.5, 2.0)], |_, v| {
        v[0].mul(v[1])?.sum_all()
    });
    check(
        "l1_distance",
        &[(shape, 0.0, 1.0), (shape, 2.0, 3.0)],
        |_, v| v[0].l1_distance(v[1]),
    );
    check("l2_norm", &[(shape, 0.3, 1.0)], |_, v| v[0].l2_norm());
    check("recip", &[(shape, 0.5, 2.0)], |_, v| v[0].recip()?.sum_all());
    check(
        "scale_rows",
        &[(&[3, 4], -1.0, 1.0), (&[3], 0.5, 1.5)],
        |_, v| v[0].scale_rows(v[1])?.square()?.sum_all(),
    );
}

#[test]
fn reduction_and_structural_ops() {
    check("mean_all", &[(&[3, 4], -1.0, 1.0)], |_, v| v[0].mean_all());
    check("sum_axis0", &[(&[3, 4], -1.0, 1.0)], |_, v| {
        v[0].sum_axis2(0)?.square()?.sum_all()
    });
    check("sum_axis1", &[(&[3, 4], -1.0, 1.0)], |_, v| {
        v[0].sum_axis2(1)?.square()?.sum_all()
    });
    check("softmax_rows", &[(&[3, 4], -1.0, 1.0)], |_, v| {
        v[0].softmax_rows()?.square()?.sum_all()
    });
    check("reshape", &[(&[2, 6], -1.0, 1.0)], |_, v| {
        v[0].reshape([3, 4])?.square()?.sum_all()
    });
    check("slice", &[(&[2, 5, 3], -1.0, 1.0)], |_, v| {
        v[0].slice(1, 1, 3)?.square()?.sum_all()
    });
    check("transpose2d", &[(&[3, 4], -1.0, 1.0)], |_, v| {
        v[0].transpose2d()?.square()?.sum_all()
    });
    check(
        "matmul",
        &[(&[3, 4], -1.0, 1.0), (&[4, 2], -1.0, 1.0)],
        |_, v| v[0].matmul(v[1])?.square()?.sum_all(),
    );
    check(
        "concat",
        &[(&[1, 2, 3, 3], -1.0, 1.0), (&[1, 2, 3, 3], -1.0, 1.0)],
        |t, v| t.concat(&[v[0], v[1]], 1)?.square()?.sum_all(),
    );
}

#[test]
fn conv_and_pool_ops() {
    check(
        "conv2d",
        &[
            (&[2, 2, 5, 5], -1.0, 1.0),
            (&[3, 2, 3, 3], -1.0, 1.0),
            (&[3], -0.5, 0.5),
        ],
        |_, v| v[0].conv2d(v[1], Some(v[2]), 2, 1)?.square()?.sum_all(),
    );
    check(
        "conv2d_asym_stride",
        &[(&[1, 2, 7, 5], -1.0, 1.0), (&[3, 2, 3, 3], -1.0, 1.0)],
        |_, v| v[0].conv2d(v[1], None, (3, 2), 1)?.square()?.sum_all(),
    );
    check(
        "conv_transpose2d",
        &[
            (&[1, 3, 4, 4], -1.0, 1.0),
            (&[3, 2, 3, 3], -1.0, 1.0),
            (&[2], -0.5, 0.5),
        ],
        |_, v| {
            v[0].conv_transpose2d(v[1], Some(v[2]), 2, 1, 1)?
                .square()?
                .sum_all()
        },
    );
    check("avg_pool2d", &[(&[2, 2, 6, 6], -1.0, 1.0)], |_, v| {
        v[0].avg_pool2d(2, 2)?.square()?.sum_all()
    });
    check("global_avg_pool", &[(&[2, 3, 4, 4], -1.0, 1.0)], |_, v| {
        v[0].global_avg_pool()?.square()?.sum_all()
    });
}

#[test]
fn batchnorm_ops() {
    check(
        "batchnorm_train",
        &[
            (&[4, 2, 3, 3], -1.0, 1.0),
            (&[2], 0.5, 1.5),
            (&[2], -0.5, 0.5),
        ],
        |_, v| {
            let (y, _, _) = v[0].batchnorm_train(v[1], v[2], 1e-5)?;
            y.square()?.sum_all()
        },
    );
    check(
        "batchnorm_eval",
        &[
            (&[2, 2, 3, 3], -1.0, 1.0),
            (&[2], 0.5, 1.5),
            (&[2], -0.5, 0.5),
        ],
        |_, v| {
            v[0].batchnorm_eval(v[1], v[2], vec![0.1, -0.2], vec![0.9, 1.1], 1e-5)?
                .square()?
                .sum_all()
        },
    );
}

#[test]
fn batchnorm_train_normalizes_to_beta_gamma() {
    let mut rng = rng::seeded(77);
    // >= 256 elements per channel
    let x = randt(&mut rng, &[4, 2, 8, 8], -3.0, 5.0);
    let tape = Tape::<f64>::new();
    let xv = tape.constant(x);
    let gamma = tape.constant(Tensor::new([2], vec![2.0, 0.5]).unwrap());
    let beta = tape.constant(Tensor::new([2], vec![1.0, -1.0]).unwrap());
    let (y, _, _) = xv.batchnorm_train(gamma, beta, 1e-5).unwrap();
    let y = y.value();
    for c in 0..2 {
        let mut vals = Vec::new();
        for n in 0..4 {
            for i in 0..64 {
                vals.push(y.data()[(n * 2 + c) * 64 + i]);
            }
        }
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        let want_beta = if c == 0 { 1.0 } else { -1.0 };
        let want_gamma = if c == 0 { 2.0 } else { 0.5 };
        assert!((mean - want_beta).abs() < 1e-4);
        assert!((var.sqrt() - want_gamma).abs() < 1e-4);
    }
}

#[test]
fn batchnorm_eval_identity_with_unit_stats() {
    let mut rng = rng::seeded(78);
    let x = randt(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    let y = lwtf_core::tensor::bn_eval(
        &x,
        &Tensor::full([3], 1.0),
        &Tensor::zeros([3]),
        &[0.0; 3],
        &[1.0; 3],
        0.0,
    )
    .unwrap();
    assert!(y.max_abs_diff(&x).unwrap() < 1e-12);
}

#[test]
fn backward_accumulates_through_shared_subexpressions() {
    // f(x) = sum(x * x) + sum(x): grad = 2x + 1
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::new([2], vec![3.0, -2.0]).unwrap());
    let a = x.mul(x).unwrap().sum_all().unwrap();
    let b = x.sum_all().unwrap();
    let loss = a.add(b).unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = grads.get(x).unwrap();
    assert_eq!(g.data(), &[7.0, -3.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::scalar(2.0));
    let c = tape.constant(Tensor::scalar(5.0));
    let loss = x.mul(c).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(x).unwrap().item(), 5.0);
}
