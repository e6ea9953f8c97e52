//! Convolution correctness against independent oracles: a six-loop direct
//! convolution, a scatter-accumulate transpose oracle, and the
//! inner-product adjointness identity.

use lwtf_core::rng;
use lwtf_core::tensor::{self, Tensor};
use rand::Rng;

/// Independent six-loop convolution used as the test oracle.
fn conv_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: (usize, usize),
    pad: usize,
) -> Tensor<f64> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride.0 + 1;
    let wo = (wd + 2 * pad - k) / stride.1 + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for item in 0..n {
        for co in 0..cout {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cin {
                        for kh in 0..k {
                            for kw in 0..k {
                                let ih = (oh * stride.0 + kh) as isize - pad as isize;
                                let iw = (ow * stride.1 + kw) as isize - pad as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= wd as isize {
                                    continue;
                                }
                                acc += x.data()
                                    [((item * cin + ci) * h + ih as usize) * wd + iw as usize]
                                    * w.data()[((co * cin + ci) * k + kh) * k + kw];
                            }
                        }
                    }
                    out[((item * cout + co) * ho + oh) * wo + ow] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, cout, ho, wo], out).unwrap()
}

/// Independent scatter-accumulate transpose-convolution oracle.
fn convt_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    stride: (usize, usize),
    pad: usize,
    out_pad: usize,
) -> Tensor<f64> {
    let (n, cin, hi, wi) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[1], w.shape()[2]);
    let ho = (hi - 1) * stride.0 + k + out_pad - 2 * pad;
    let wo = (wi - 1) * stride.1 + k + out_pad - 2 * pad;
    let mut out = vec![0.0; n * cout * ho * wo];
    for item in 0..n {
        for ci in 0..cin {
            for co in 0..cout {
                for ih in 0..hi {
                    for iw in 0..wi {
                        let xv = x.data()[((item * cin + ci) * hi + ih) * wi + iw];
                        for kh in 0..k {
                            for kw in 0..k {
                                let oh = (ih * stride.0 + kh) as isize - pad as isize;
                                let ow = (iw * stride.1 + kw) as isize - pad as isize;
                                if oh < 0 || ow < 0 || oh >= ho as isize || ow >= wo as isize {
                                    continue;
                                }
                                out[((item * cout + co) * ho + oh as usize) * wo + ow as usize] +=
                                    xv * w.data()[((ci * cout + co) * k + kh) * k + kw];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, cout, ho, wo], out).unwrap()
}

fn randt(rng: &mut rng::Prng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn all_ones_3x3_sums_to_nine() {
    let x = Tensor::<f64>::full([1, 1, 3, 3], 1.0);
    let w = Tensor::<f64>::full([1, 1, 3, 3], 1.0);
    let y = tensor::conv2d(&x, &w, None, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert_eq!(y.item(), 9.0);
}

#[test]
fn identity_1x1_kernel_passes_input_through() {
    let mut rng = rng::seeded(1);
    let x = randt(&mut rng, &[2, 1, 5, 4]);
    let w = Tensor::<f64>::full([1, 1, 1, 1], 1.0);
    let y = tensor::conv2d(&x, &w, None, 1, 0).unwrap();
    assert_eq!(y.max_abs_diff(&x).unwrap(), 0.0);
}

#[test]
fn conv2d_matches_six_loop_oracle() {
    let mut rng = rng::seeded(7);
    let x = randt(&mut rng, &[2, 4, 8, 8]);
    let w = randt(&mut rng, &[6, 4, 3, 3]);
    let b = randt(&mut rng, &[6]);
    let y = tensor::conv2d(&x, &w, Some(&b), 2, 1).unwrap();
    let want = conv_oracle(&x, &w, Some(&b), (2, 2), 1);
    assert_eq!(y.shape(), want.shape());
    assert!(y.max_abs_diff(&want).unwrap() < 1e-5);
}

#[test]
fn conv2d_asymmetric_stride_matches_oracle() {
    let mut rng = rng::seeded(8);
    let x = randt(&mut rng, &[1, 3, 9, 6]);
    let w = randt(&mut rng, &[5, 3, 3, 3]);
    let y = tensor::conv2d(&x, &w, None, (3, 2), 1).unwrap();
    let want = conv_oracle(&x, &w, None, (3, 2), 1);
    assert_eq!(y.shape(), want.shape());
    assert!(y.max_abs_diff(&want).unwrap() < 1e-5);
}

#[test]
fn fast_path_matches_direct_reference_across_shapes() {
    let mut rng = rng::seeded(9);
    for &(n, cin, cout, h, w, k, s, p) in &[
        (1usize, 1usize, 1usize, 4usize, 4usize, 3usize, 1usize, 1usize),
        (2, 3, 8, 8, 8, 3, 2, 1),
        (1, 8, 4, 7, 5, 1, 1, 0),
        (3, 2, 2, 6, 6, 7, 1, 3),
        (1, 4, 6, 10, 10, 3, 3, 1),
    ] {
        let x = randt(&mut rng, &[n, cin, h, w]);
        let wt = randt(&mut rng, &[cout, cin, k, k]);
        let b = randt(&mut rng, &[cout]);
        let fast = tensor::conv2d(&x, &wt, Some(&b), s, p).unwrap();
        let direct = tensor::conv2d_direct(&x, &wt, Some(&b), s, p).unwrap();
        assert!(
            fast.max_abs_diff(&direct).unwrap() < 1e-5,
            "mismatch at shape ({n},{cin},{cout},{h},{w},k{k},s{s},p{p})"
        );
    }
}

#[test]
fn conv_transpose_identity_case() {
    let mut rng = rng::seeded(2);
    let x = randt(&mut rng, &[1, 2, 4, 4]);
    // (in=2, out=2, 1, 1) identity: w[ci][co] = 1 iff ci == co
    let w = Tensor::from_fn([2, 2, 1, 1], |i| if i == 0 || i == 3 { 1.0 } else { 0.0 });
    let y = tensor::conv_transpose2d(&x, &w, None, 1, 0, 0).unwrap();
    assert_eq!(y.max_abs_diff(&x).unwrap(), 0.0);
}

#[test]
fn conv_transpose_matches_scatter_oracle() {
    let mut rng = rng::seeded(3);
    let x = randt(&mut rng, &[2, 8, 4, 4]);
    let w = randt(&mut rng, &[8, 5, 3, 3]);
    for &(s, p, op) in &[(2usize, 0usize, 0usize), (2, 1, 1), (1, 1, 0), (3, 1, 2)] {
        let y = tensor::conv_transpose2d(&x, &w, None, s, p, op).unwrap();
        let want = convt_oracle(&x, &w, (s, s), p, op);
        assert_eq!(y.shape(), want.shape(), "s{s} p{p} op{op}");
        assert!(y.max_abs_diff(&want).unwrap() < 1e-5, "s{s} p{p} op{op}");
    }
}

/// <conv2d(x, w), y> == <x, conv_transpose2d(y, w)> for matching params.
#[test]
fn adjointness_identity_f64() {
    for seed in 0..5 {
        let mut rng = rng::seeded(100 + seed);
        for &(s, p, h) in &[(1usize, 0usize, 6usize), (2, 1, 7), (2, 1, 8), (3, 2, 9)] {
            let x = randt(&mut rng, &[1, 3, h, h]);
            let w = randt(&mut rng, &[4, 3, 3, 3]);
            let cx = tensor::conv2d(&x, &w, None, s, p).unwrap();
            let y = randt(&mut rng, cx.shape());
            // output_padding chosen so the transpose lands back on x's size
            let op = h - ((cx.shape()[2] - 1) * s + 3 - 2 * p);
            let ty = tensor::conv_transpose2d(&y, &w, None, s, p, op).unwrap();
            assert_eq!(ty.shape(), x.shape());
            let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
            assert!(
                (lhs - rhs).abs() < 1e-10,
                "seed {seed} s{s} p{p} h{h}: {lhs} vs {rhs}"
            );
        }
    }
}

#[test]
fn adjointness_identity_f32() {
    let mut rng = rng::seeded(42);
    let x32 = Tensor::<f32>::from_fn([1, 2, 6, 6], |_| rng.gen_range(-1.0..1.0f32));
    let w32 = Tensor::<f32>::from_fn([3, 2, 3, 3], |_| rng.gen_range(-1.0..1.0f32));
    let cx = tensor::conv2d(&x32, &w32, None, 2, 1).unwrap();
    let y32 = Tensor::<f32>::from_fn(cx.shape().to_vec(), |_| rng.gen_range(-1.0..1.0f32));
    let op = 6 - ((cx.shape()[2] - 1) * 2 + 3 - 2);
    let ty = tensor::conv_transpose2d(&y32, &w32, None, 2, 1, op).unwrap();
    let lhs: f64 = cx.data().iter().zip(y32.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
    let rhs: f64 = x32.data().iter().zip(ty.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
    assert!((lhs - rhs).abs() < 1e-5);
}

#[test]
fn forward_is_deterministic_at_any_thread_count() {
    let mut rng = rng::seeded(5);
    let x = randt(&mut rng, &[2, 3, 16, 16]);
    let w = randt(&mut rng, &[8, 3, 3, 3]);
    lwtf_core::runtime::set_threads(1);
    let a = tensor::conv2d(&x, &w, None, 1, 1).unwrap();
    lwtf_core::runtime::set_threads(8);
    let b = tensor::conv2d(&x, &w, None, 1, 1).unwrap();
    lwtf_core::runtime::set_threads(1);
    assert!(a.bit_eq(&b));
}

#[test]
fn shape_mismatch_is_a_descriptive_error() {
    let x = Tensor::<f32>::zeros([1, 3, 8, 8]);
    let w = Tensor::<f32>::zeros([4, 2, 3, 3]);
    let err = tensor::conv2d(&x, &w, None, 1, 1).unwrap_err();
    let msg = format!("{err}");
    assert!(msg.contains("channels"), "got: {msg}");
}
