//! Reverse-mode autodiff over a Wengert list.
//!
//! Every traced operation appends one node (value, parent refs, backward
//! closure over the saved activations), so the list is topologically ordered
//! by construction. [`Tape::backward`] walks it once in reverse, invoking
//! each backward at most once and only materializing gradients for subgraphs
//! that reach a parameter leaf.
//!
//! A tape is owned by a single training step; models themselves hold plain
//! tensors and register their parameters as leaves each step.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

type BackFn<E> = Box<dyn FnOnce(&Tensor<E>, &[bool]) -> Result<Vec<Option<Tensor<E>>>>>;

struct Node<E: Elem> {
    value: Tensor<E>,
    parents: Vec<usize>,
    needs_grad: bool,
    backward: Option<BackFn<E>>,
}

/// Recorded computation. See the module docs.
pub struct Tape<E: Elem = f32> {
    nodes: RefCell<Vec<Node<E>>>,
}

/// Handle to a tape entry. Copyable and cheap; values are fetched on demand.
#[derive(Clone, Copy)]
pub struct Var<'t, E: Elem = f32> {
    tape: &'t Tape<E>,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by leaf vars.
pub struct Gradients<E: Elem = f32> {
    by_id: Vec<Option<Tensor<E>>>,
}

impl<E: Elem> Gradients<E> {
    pub fn get(&self, v: Var<'_, E>) -> Option<&Tensor<E>> {
        self.by_id.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var<'_, E>) -> Option<Tensor<E>> {
        self.by_id.get_mut(v.id).and_then(|g| g.take())
    }
}

impl<E: Elem> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register an input. Gradients are accumulated only for leaves with
    /// `requires_grad`.
    pub fn leaf(&self, value: Tensor<E>, requires_grad: bool) -> Var<'_, E> {
        self.push(Node {
            value,
            parents: Vec::new(),
            needs_grad: requires_grad,
            backward: None,
        })
    }

    /// Shorthand for a trainable leaf.
    pub fn param(&self, value: Tensor<E>) -> Var<'_, E> {
        self.leaf(value, true)
    }

    /// Shorthand for a constant (no gradient flows into it).
    pub fn constant(&self, value: Tensor<E>) -> Var<'_, E> {
        self.leaf(value, false)
    }

    fn push(&self, node: Node<E>) -> Var<'_, E> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn record(
        &self,
        value: Tensor<E>,
        parents: Vec<usize>,
        make_backward: impl FnOnce() -> BackFn<E>,
    ) -> Var<'_, E> {
        let needs_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].needs_grad)
        };
        let backward = needs_grad.then(make_backward);
        self.push(Node {
            value,
            parents,
            needs_grad,
            backward,
        })
    }

    fn value_of(&self, id: usize) -> Tensor<E> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// grad-requiring leaf reachable from `loss`.
    pub fn backward(&self, loss: Var<'_, E>) -> Result<Gradients<E>> {
        let mut nodes = self.nodes.borrow_mut();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::shape("backward", "loss must be a scalar tensor"));
        }
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(
            nodes[loss.id].value.shape().to_vec(),
            E::one(),
        ));

        for id in (0..=loss.id).rev() {
            if grads[id].is_none() || !nodes[id].needs_grad {
                continue;
            }
            let Some(back) = nodes[id].backward.take() else {
                continue; // leaf: keep its gradient for the caller
            };
            let g = grads[id].take().expect("checked above");
            let parents = nodes[id].parents.clone();
            let wanted: Vec<bool> = parents.iter().map(|&p| nodes[p].needs_grad).collect();
            let parent_grads = back(&g, &wanted)?;
            debug_assert_eq!(parent_grads.len(), parents.len());
            for (p, pg) in parents.into_iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                grads[p] = Some(match grads[p].take() {
                    Some(acc) => acc.add(&pg)?,
                    None => pg,
                });
            }
        }
        Ok(Gradients { by_id: grads })
    }

    /// Concatenate along `axis`.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, E>], axis: usize) -> Result<Var<'t, E>> {
        let values: Vec<Tensor<E>> = parts.iter().map(|p| self.value_of(p.id)).collect();
        let refs: Vec<&Tensor<E>> = values.iter().collect();
        let out = tensor::concat(&refs, axis)?;
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.record(out, ids, move || {
            Box::new(move |go, wanted| {
                let mut out = Vec::with_capacity(sizes.len());
                let mut offset = 0;
                for (i, &len) in sizes.iter().enumerate() {
                    if wanted[i] {
                        out.push(Some(tensor::slice(go, axis, offset, len)?));
                    } else {
                        out.push(None);
                    }
                    offset += len;
                }
                Ok(out)
            })
        }))
    }
}

impl<'t, E: Elem> Var<'t, E> {
    pub fn value(&self) -> Tensor<E> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    /// Re-enter the tape as a constant: the value flows, gradients do not.
    pub fn detach(self) -> Self {
        self.tape.constant(self.value())
    }

    /// Concatenate with `other` along `axis`.
    pub fn concat(self, other: Self, axis: usize) -> Result<Self> {
        self.tape.concat(&[self, other], axis)
    }

    fn unary(
        self,
        y: Tensor<E>,
        back: impl FnOnce(&Tensor<E>) -> Result<Tensor<E>> + 'static,
    ) -> Self {
        self.tape.record(y, vec![self.id], move || {
            Box::new(move |go: &Tensor<E>, _: &[bool]| Ok(vec![Some(back(go)?)]))
        })
    }

    /// ReLU. The subgradient at exactly 0 is taken as 0.
    pub fn relu(self) -> Result<Self> {
        let x = self.value();
        let y = x.relu()?;
        Ok(self.unary(y, move |go| {
            tensor::unary_bwd_by_input("relu_bwd", go, &x, |v| {
                if v > E::zero() {
                    E::one()
                } else {
                    E::zero()
                }
            })
        }))
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Self> {
        let x = self.value();
        let y = x.leaky_relu(slope)?;
        Ok(self.unary(y, move |go| {
            let s = E::of(slope);
            tensor::unary_bwd_by_input("leaky_relu_bwd", go, &x, |v| {
                if v > E::zero() {
                    E::one()
                } else {
                    s
                }
            })
        }))
    }

    pub fn sigmoid(self) -> Result<Self> {
        let y = self.value().sigmoid()?;
        let yc = y.clone();
        Ok(self.unary(y, move |go| {
            tensor::unary_bwd_by_input("sigmoid_bwd", go, &yc, |y| y * (E::one() - y))
        }))
    }

    pub fn tanh(self) -> Result<Self> {
        let y = self.value().tanh_t()?;
        let yc = y.clone();
        Ok(self.unary(y, move |go| {
            tensor::unary_bwd_by_input("tanh_bwd", go, &yc, |y| E::one() - y * y)
        }))
    }

    pub fn log(self) -> Result<Self> {
        let x = self.value();
        let y = x.log_t()?;
        Ok(self.unary(y, move |go| {
            tensor::unary_bwd_by_input("log_bwd", go, &x, |v| E::one() / v)
        }))
    }

    pub fn softplus(self) -> Result<Self> {
        let x = self.value();
        let y = x.softplus()?;
        Ok(self.unary(y, move |go| {
            tensor::unary_bwd_by_input("softplus_bwd", go, &x, tensor::sigmoid_scalar)
        }))
    }

    pub fn abs(self) -> Result<Self> {
        let x = self.value();
        let y = x.abs_t()?;
        Ok(self.unary(y, move |go| {
            tensor::unary_bwd_by_input("abs_bwd", go, &x, |v| {
                if v > E::zero() {
                    E::one()
                } else if v < E::zero() {
                    -E::one()
                } else {
                    E::zero()
                }
            })
        }))
    }

    pub fn square(self) -> Result<Self> {
        let x = self.value();
        let y = x.square()?;
        Ok(self.unary(y, move |go| {
            tensor::unary_bwd_by_input("square_bwd", go, &x, |v| v + v)
        }))
    }

    pub fn sqrt(self) -> Result<Self> {
        let y = self.value().sqrt_t()?;
        let yc = y.clone();
        Ok(self.unary(y, move |go| {
            tensor::unary_bwd_by_input("sqrt_bwd", go, &yc, |y| E::of(0.5) / y)
        }))
    }

    pub fn neg(self) -> Result<Self> {
        let y = self.value().neg()?;
        Ok(self.unary(y, |go| go.neg()))
    }

    /// Gradient passes through the kept band `[lo, hi]` (inclusive).
    pub fn clamp(self, lo: f64, hi: f64) -> Result<Self> {
        let x = self.value();
        let y = x.clamp_t(lo, hi)?;
        Ok(self.unary(y, move |go| {
            let (l, h) = (E::of(lo), E::of(hi));
            tensor::unary_bwd_by_input("clamp_bwd", go, &x, |v| {
                if v >= l && v <= h {
                    E::one()
                } else {
                    E::zero()
                }
            })
        }))
    }

    pub fn scale(self, c: f64) -> Result<Self> {
        let y = self.value().scale(c)?;
        Ok(self.unary(y, move |go| go.scale(c)))
    }

    pub fn add_scalar(self, c: f64) -> Result<Self> {
        let y = self.value().add_scalar(c)?;
        Ok(self.unary(y, |go| Ok(go.clone())))
    }

    pub fn add(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        let y = a.add(&b)?;
        let (ash, bsh) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self.tape.record(y, vec![self.id, other.id], move || {
            Box::new(move |go: &Tensor<E>, wanted: &[bool]| {
                Ok(vec![
                    wanted[0].then(|| tensor::fit_grad(go, &ash)).transpose()?,
                    wanted[1].then(|| tensor::fit_grad(go, &bsh)).transpose()?,
                ])
            })
        }))
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        let y = a.sub(&b)?;
        let (ash, bsh) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self.tape.record(y, vec![self.id, other.id], move || {
            Box::new(move |go: &Tensor<E>, wanted: &[bool]| {
                let db = if wanted[1] {
                    Some(tensor::fit_grad(&go.neg()?, &bsh)?)
                } else {
                    None
                };
                Ok(vec![
                    wanted[0].then(|| tensor::fit_grad(go, &ash)).transpose()?,
                    db,
                ])
            })
        }))
    }

    pub fn mul(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        let y = a.mul(&b)?;
        Ok(self.tape.record(y, vec![self.id, other.id], move || {
            Box::new(move |go: &Tensor<E>, wanted: &[bool]| {
                let da = if wanted[0] {
                    Some(tensor::fit_grad(&go.mul(&b)?, a.shape())?)
                } else {
                    None
                };
                let db = if wanted[1] {
                    Some(tensor::fit_grad(&go.mul(&a)?, b.shape())?)
                } else {
                    None
                };
                Ok(vec![da, db])
            })
        }))
    }

    pub fn sum_all(self) -> Result<Self> {
        let x = self.value();
        let y = x.sum_all()?;
        let shape = x.shape().to_vec();
        Ok(self.unary(y, move |go| Ok(Tensor::full(shape, go.item()))))
    }

    pub fn mean_all(self) -> Result<Self> {
        let x = self.value();
        let y = x.mean_all()?;
        let shape = x.shape().to_vec();
        let inv = 1.0 / x.len() as f64;
        Ok(self.unary(y, move |go| {
            Ok(Tensor::full(shape, go.item() * E::of(inv)))
        }))
    }

    pub fn sum_axis2(self, axis: usize) -> Result<Self> {
        let x = self.value();
        let y = x.sum_axis2(axis)?;
        let (r, c) = x.dims2()?;
        Ok(self.unary(y, move |go| {
            let mut dx = vec![E::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    dx[i * c + j] = if axis == 0 { go.data()[j] } else { go.data()[i] };
                }
            }
            Tensor::from_op("sum_axis_bwd", [r, c], dx)
        }))
    }

    pub fn softmax_rows(self) -> Result<Self> {
        let y = self.value().softmax_rows()?;
        let yc = y.clone();
        Ok(self.unary(y, move |go| tensor::softmax_rows_bwd(go, &yc)))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let x = self.value();
        let old = x.shape().to_vec();
        let y = x.reshaped(shape)?;
        Ok(self.unary(y, move |go| go.reshaped(old)))
    }

    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let x = self.value();
        let y = tensor::slice(&x, axis, start, len)?;
        let in_shape = x.shape().to_vec();
        Ok(self.unary(y, move |go| tensor::slice_bwd(go, &in_shape, axis, start)))
    }

    pub fn transpose2d(self) -> Result<Self> {
        let y = tensor::transpose2d(&self.value())?;
        Ok(self.unary(y, |go| tensor::transpose2d(go)))
    }

    pub fn matmul(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        let y = tensor::matmul(&a, &b)?;
        Ok(self.tape.record(y, vec![self.id, other.id], move || {
            Box::new(move |go: &Tensor<E>, wanted: &[bool]| {
                let (da, db) = tensor::matmul_bwd(go, &a, &b, (wanted[0], wanted[1]))?;
                Ok(vec![da, db])
            })
        }))
    }

    pub fn l1_distance(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        let y = a.l1_distance(&b)?;
        let n = a.len() as f64;
        Ok(self.tape.record(y, vec![self.id, other.id], move || {
            Box::new(move |go: &Tensor<E>, wanted: &[bool]| {
                let g = go.item() * E::of(1.0 / n);
                let mut da = vec![E::zero(); a.len()];
                for ((d, &av), &bv) in da.iter_mut().zip(a.data()).zip(b.data()) {
                    *d = if av > bv {
                        g
                    } else if av < bv {
                        -g
                    } else {
                        E::zero()
                    };
                }
                let da = Tensor::from_op("l1_distance_bwd", a.shape().to_vec(), da)?;
                let db = wanted[1].then(|| da.neg()).transpose()?;
                Ok(vec![wanted[0].then_some(da), db])
            })
        }))
    }

    pub fn recip(self) -> Result<Self> {
        let x = self.value();
        let y = x.recip()?;
        Ok(self.unary(y, move |go| {
            tensor::unary_bwd_by_input("recip_bwd", go, &x, |v| -(E::one() / (v * v)))
        }))
    }

    /// Row-wise scaling of a rank-2 tensor by a length-N vector.
    pub fn scale_rows(self, s: Self) -> Result<Self> {
        let (x, sv) = (self.value(), s.value());
        let y = x.scale_rows(&sv)?;
        Ok(self.tape.record(y, vec![self.id, s.id], move || {
            Box::new(move |go: &Tensor<E>, wanted: &[bool]| {
                let (r, c) = x.dims2()?;
                let dx = if wanted[0] {
                    Some(go.scale_rows(&sv)?)
                } else {
                    None
                };
                let ds = if wanted[1] {
                    let mut d = vec![E::zero(); r];
                    for i in 0..r {
                        let mut acc = E::zero();
                        for j in 0..c {
                            acc = acc + go.data()[i * c + j] * x.data()[i * c + j];
                        }
                        d[i] = acc;
                    }
                    Some(Tensor::from_op("scale_rows_bwd", [r], d)?)
                } else {
                    None
                };
                Ok(vec![dx, ds])
            })
        }))
    }

    pub fn l2_norm(self) -> Result<Self> {
        let x = self.value();
        let y = x.l2_norm()?;
        let norm = y.item();
        Ok(self.unary(y, move |go| {
            if norm == E::zero() {
                return Ok(Tensor::zeros(x.shape().to_vec()));
            }
            x.scale((go.item() / norm).as_f64())
        }))
    }

    pub fn conv2d(
        self,
        weight: Self,
        bias: Option<Self>,
        stride: impl Into<tensor::Stride>,
        pad: usize,
    ) -> Result<Self> {
        let stride = stride.into();
        let (x, w) = (self.value(), weight.value());
        let b = bias.map(|b| b.value());
        let y = tensor::conv2d(&x, &w, b.as_ref(), stride, pad)?;
        let mut parents = vec![self.id, weight.id];
        if let Some(b) = bias {
            parents.push(b.id);
        }
        Ok(self.tape.record(y, parents, move || {
            Box::new(move |go: &Tensor<E>, wanted: &[bool]| {
                let needs = (
                    wanted[0],
                    wanted[1],
                    wanted.get(2).copied().unwrap_or(false),
                );
                let (dx, dw, db) = tensor::conv2d_bwd(go, &x, &w, stride, pad, needs)?;
                let mut out = vec![dx, dw];
                if wanted.len() > 2 {
                    out.push(db);
                }
                Ok(out)
            })
        }))
    }

    pub fn conv_transpose2d(
        self,
        weight: Self,
        bias: Option<Self>,
        stride: impl Into<tensor::Stride>,
        pad: usize,
        out_pad: usize,
    ) -> Result<Self> {
        let stride = stride.into();
        let (x, w) = (self.value(), weight.value());
        let b = bias.map(|b| b.value());
        let y = tensor::conv_transpose2d(&x, &w, b.as_ref(), stride, pad, out_pad)?;
        let mut parents = vec![self.id, weight.id];
        if let Some(b) = bias {
            parents.push(b.id);
        }
        Ok(self.tape.record(y, parents, move || {
            Box::new(move |go: &Tensor<E>, wanted: &[bool]| {
                let needs = (
                    wanted[0],
                    wanted[1],
                    wanted.get(2).copied().unwrap_or(false),
                );
                let (dx, dw, db) = tensor::conv_transpose2d_bwd(go, &x, &w, stride, pad, needs)?;
                let mut out = vec![dx, dw];
                if wanted.len() > 2 {
                    out.push(db);
                }
                Ok(out)
            })
        }))
    }

    pub fn avg_pool2d(self, k: usize, stride: usize) -> Result<Self> {
        let x = self.value();
        let y = tensor::avg_pool2d(&x, k, stride)?;
        let in_shape = x.shape().to_vec();
        Ok(self.unary(y, move |go| tensor::avg_pool2d_bwd(go, &in_shape, k, stride)))
    }

    pub fn global_avg_pool(self) -> Result<Self> {
        let x = self.value();
        let y = tensor::global_avg_pool(&x)?;
        let in_shape = x.shape().to_vec();
        Ok(self.unary(y, move |go| tensor::global_avg_pool_bwd(go, &in_shape)))
    }

    /// Train-mode batchnorm; also returns the batch statistics so callers
    /// can fold them into running estimates.
    pub fn batchnorm_train(
        self,
        gamma: Self,
        beta: Self,
        eps: f64,
    ) -> Result<(Self, Vec<E>, Vec<E>)> {
        let (x, g) = (self.value(), gamma.value());
        let (y, saved) = tensor::bn_train(&x, &g, &beta.value(), eps)?;
        let (batch_mean, batch_var) = (saved.mean.clone(), saved.var.clone());
        let out = self
            .tape
            .record(y, vec![self.id, gamma.id, beta.id], move || {
                Box::new(move |go: &Tensor<E>, wanted: &[bool]| {
                    let (dx, dg, db) = tensor::bn_train_bwd(
                        go,
                        &x,
                        &g,
                        &saved,
                        (wanted[0], wanted[1], wanted[2]),
                    )?;
                    Ok(vec![dx, dg, db])
                })
            });
        Ok((out, batch_mean, batch_var))
    }

    pub fn batchnorm_eval(
        self,
        gamma: Self,
        beta: Self,
        running_mean: Vec<E>,
        running_var: Vec<E>,
        eps: f64,
    ) -> Result<Self> {
        let (x, g) = (self.value(), gamma.value());
        let y = tensor::bn_eval(&x, &g, &beta.value(), &running_mean, &running_var, eps)?;
        Ok(self
            .tape
            .record(y, vec![self.id, gamma.id, beta.id], move || {
                Box::new(move |go: &Tensor<E>, wanted: &[bool]| {
                    let (dx, dg, db) = tensor::bn_eval_bwd(
                        go,
                        &x,
                        &g,
                        &running_mean,
                        &running_var,
                        eps,
                        (wanted[0], wanted[1], wanted[2]),
                    )?;
                    Ok(vec![dx, dg, db])
                })
            }))
    }
}
