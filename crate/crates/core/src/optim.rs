//! Adam optimizer with in-place parameter updates.

use alloc::format;
use alloc::vec::Vec;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamCfg {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamCfg {
    fn default() -> Self {
        AdamCfg {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamCfg {
    pub fn with_lr(lr: f64) -> Self {
        AdamCfg {
            lr,
            ..Default::default()
        }
    }
}

/// First/second moment buffers, one pair per parameter tensor.
pub struct Adam<E: Elem = f32> {
    cfg: AdamCfg,
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
    t: u64,
}

impl<E: Elem> Adam<E> {
    pub fn new(cfg: AdamCfg, params: &[&Tensor<E>]) -> Self {
        Adam {
            cfg,
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            t: 0,
        }
    }

    pub fn cfg(&self) -> AdamCfg {
        self.cfg
    }

    /// One update. `grads[i] = None` means zero gradient for that tensor
    /// (moments still decay). Updates are deterministic and in place.
    pub fn step(&mut self, params: &mut [&mut Tensor<E>], grads: &[Option<Tensor<E>>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Train {
                detail: format!(
                    "optimizer tracks {} tensors, got {} params / {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        self.t += 1;
        let b1 = E::of(self.cfg.beta1);
        let b2 = E::of(self.cfg.beta2);
        let eps = E::of(self.cfg.eps);
        let bc1 = E::of(1.0 - self.cfg.beta1.powi(self.t as i32));
        let bc2 = E::of(1.0 - self.cfg.beta2.powi(self.t as i32));
        let lr = E::of(self.cfg.lr);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(Error::shape(
                        "adam_step",
                        format!("grad {:?} vs param {:?}", g.shape(), p.shape()),
                    ));
                }
            }
            let md = m.make_mut();
            let vd = v.make_mut();
            let pd = p.make_mut();
            for i in 0..pd.len() {
                let gi = g.as_ref().map_or(E::zero(), |g| g.data()[i]);
                md[i] = b1 * md[i] + (E::one() - b1) * gi;
                vd[i] = b2 * vd[i] + (E::one() - b2) * gi * gi;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] = pd[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_gradient_leaves_params_unchanged_from_rest() {
        let mut p = Tensor::<f64>::full([3], 1.5);
        let mut adam = Adam::new(AdamCfg::default(), &[&p]);
        adam.step(&mut [&mut p], &[None]).unwrap();
        assert!(p.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn single_step_matches_hand_executed_update() {
        // One scalar param, g = 1, lr = 0.1:
        // m = 0.1, v = 0.001, mhat = 1, vhat = 1,
        // delta = -0.1 * 1 / (1 + eps)
        let mut p = Tensor::<f64>::scalar(0.0);
        let cfg = AdamCfg {
            lr: 0.1,
            ..Default::default()
        };
        let mut adam = Adam::new(cfg, &[&p]);
        adam.step(&mut [&mut p], &[Some(Tensor::scalar(1.0))]).unwrap();
        let want = -0.1 / (1.0 + 1e-8);
        assert!((p.item() - want).abs() < 1e-12, "got {}", p.item());
    }

    #[test]
    fn two_identical_runs_are_bitwise_identical() {
        let run = || {
            let mut p = Tensor::<f32>::new([2], vec![0.3, -0.7]).unwrap();
            let mut adam = Adam::new(AdamCfg::with_lr(0.01), &[&p]);
            for step in 0..10 {
                let g = Tensor::new([2], vec![0.1 * step as f32, -0.2]).unwrap();
                adam.step(&mut [&mut p], &[Some(g)]).unwrap();
            }
            p
        };
        assert!(run().bit_eq(&run()));
    }
}
