//! Batch normalization over NCHW tensors.
//!
//! Train mode normalizes by batch statistics (biased variance) and reports
//! running-stat updates to the caller; eval mode uses the stored running
//! statistics. Defaults elsewhere: momentum 0.1, eps 1e-5.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Values saved by the train-mode forward for its backward pass.
pub struct BnSaved<E: Elem> {
    pub mean: Vec<E>,
    pub inv_std: Vec<E>,
    /// Biased batch variance (what normalization used).
    pub var: Vec<E>,
}

fn check_params<E: Elem>(c: usize, gamma: &Tensor<E>, beta: &Tensor<E>) -> Result<()> {
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "batchnorm2d",
            format!(
                "gamma/beta have {}/{} entries, expected {c} channels",
                gamma.len(),
                beta.len()
            ),
        ));
    }
    Ok(())
}

/// Eval-mode forward using running statistics.
pub fn bn_eval<E: Elem>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &[E],
    running_var: &[E],
    eps: f64,
) -> Result<Tensor<E>> {
    let (n, c, h, w) = x.dims4()?;
    check_params(c, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::shape("batchnorm2d", "running stats/channel mismatch"));
    }
    let eps = E::of(eps);
    let plane = h * w;
    let mut out = vec![E::zero(); x.len()];
    for item in 0..n {
        for ci in 0..c {
            let g = gamma.data()[ci] / (running_var[ci] + eps).sqrt();
            let b = beta.data()[ci] - running_mean[ci] * g;
            let base = (item * c + ci) * plane;
            for i in 0..plane {
                out[base + i] = x.data()[base + i] * g + b;
            }
        }
    }
    Tensor::from_op("batchnorm2d", [n, c, h, w], out)
}

/// Eval-mode backward: the op is per-channel affine in x.
pub fn bn_eval_bwd<E: Elem>(
    go: &Tensor<E>,
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    running_mean: &[E],
    running_var: &[E],
    eps: f64,
    needs: (bool, bool, bool),
) -> Result<(Option<Tensor<E>>, Option<Tensor<E>>, Option<Tensor<E>>)> {
    let (n, c, h, w) = x.dims4()?;
    let eps = E::of(eps);
    let plane = h * w;
    let mut dx = if needs.0 { vec![E::zero(); x.len()] } else { Vec::new() };
    let mut dgamma = vec![E::zero(); c];
    let mut dbeta = vec![E::zero(); c];
    for item in 0..n {
        for ci in 0..c {
            let inv = E::one() / (running_var[ci] + eps).sqrt();
            let g = gamma.data()[ci] * inv;
            let base = (item * c + ci) * plane;
            for i in 0..plane {
                let gv = go.data()[base + i];
                if needs.0 {
                    dx[base + i] = gv * g;
                }
                dgamma[ci] = dgamma[ci] + gv * (x.data()[base + i] - running_mean[ci]) * inv;
                dbeta[ci] = dbeta[ci] + gv;
            }
        }
    }
    Ok((
        if needs.0 {
            Some(Tensor::from_op("batchnorm2d_bwd", [n, c, h, w], dx)?)
        } else {
            None
        },
        if needs.1 {
            Some(Tensor::from_op("batchnorm2d_bwd", [c], dgamma)?)
        } else {
            None
        },
        if needs.2 {
            Some(Tensor::from_op("batchnorm2d_bwd", [c], dbeta)?)
        } else {
            None
        },
    ))
}

/// Train-mode forward; returns the output plus saved statistics.
pub fn bn_train<E: Elem>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: f64,
) -> Result<(Tensor<E>, BnSaved<E>)> {
    let (n, c, h, w) = x.dims4()?;
    check_params(c, gamma, beta)?;
    let eps = E::of(eps);
    let plane = h * w;
    let count = E::of((n * plane) as f64);

    let mut mean = vec![E::zero(); c];
    let mut var = vec![E::zero(); c];
    for ci in 0..c {
        let mut s = E::zero();
        for item in 0..n {
            let base = (item * c + ci) * plane;
            for i in 0..plane {
                s = s + x.data()[base + i];
            }
        }
        mean[ci] = s / count;
        let mut v = E::zero();
        for item in 0..n {
            let base = (item * c + ci) * plane;
            for i in 0..plane {
                let d = x.data()[base + i] - mean[ci];
                v = v + d * d;
            }
        }
        var[ci] = v / count;
    }

    let inv_std: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
    let mut out = vec![E::zero(); x.len()];
    for item in 0..n {
        for ci in 0..c {
            let g = gamma.data()[ci] * inv_std[ci];
            let b = beta.data()[ci];
            let m = mean[ci];
            let base = (item * c + ci) * plane;
            for i in 0..plane {
                out[base + i] = (x.data()[base + i] - m) * g + b;
            }
        }
    }
    let out = Tensor::from_op("batchnorm2d", [n, c, h, w], out)?;
    Ok((out, BnSaved { mean, inv_std, var }))
}

/// Train-mode backward (standard batch-stat gradient).
pub fn bn_train_bwd<E: Elem>(
    go: &Tensor<E>,
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    saved: &BnSaved<E>,
    needs: (bool, bool, bool),
) -> Result<(Option<Tensor<E>>, Option<Tensor<E>>, Option<Tensor<E>>)> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let count = E::of((n * plane) as f64);

    let mut sum_g = vec![E::zero(); c];
    let mut sum_gx = vec![E::zero(); c]; // sum of g * xhat
    for item in 0..n {
        for ci in 0..c {
            let base = (item * c + ci) * plane;
            for i in 0..plane {
                let gv = go.data()[base + i];
                let xhat = (x.data()[base + i] - saved.mean[ci]) * saved.inv_std[ci];
                sum_g[ci] = sum_g[ci] + gv;
                sum_gx[ci] = sum_gx[ci] + gv * xhat;
            }
        }
    }

    let dx = if needs.0 {
        let mut dx = vec![E::zero(); x.len()];
        for item in 0..n {
            for ci in 0..c {
                let scale = gamma.data()[ci] * saved.inv_std[ci] / count;
                let base = (item * c + ci) * plane;
                for i in 0..plane {
                    let gv = go.data()[base + i];
                    let xhat = (x.data()[base + i] - saved.mean[ci]) * saved.inv_std[ci];
                    dx[base + i] = scale * (count * gv - sum_g[ci] - xhat * sum_gx[ci]);
                }
            }
        }
        Some(Tensor::from_op("batchnorm2d_bwd", [n, c, h, w], dx)?)
    } else {
        None
    };

    Ok((
        dx,
        if needs.1 {
            Some(Tensor::from_op("batchnorm2d_bwd", [c], sum_gx)?)
        } else {
            None
        },
        if needs.2 {
            Some(Tensor::from_op("batchnorm2d_bwd", [c], sum_g)?)
        } else {
            None
        },
    ))
}
