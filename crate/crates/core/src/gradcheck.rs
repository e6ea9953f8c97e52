//! Central finite-difference gradient checking.
//!
//! The oracle side of every differentiability contract: a scalar function of
//! some input tensors is evaluated on the tape, and each analytic gradient
//! entry is compared against (f(x+h) - f(x-h)) / 2h in f64.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Result;

/// Default step for the central difference.
pub const FD_STEP: f64 = 1e-5;

/// Check analytic gradients of `f` w.r.t. every input against central
/// differences. `rel_tol` is the acceptance threshold on
/// |analytic - numeric| / max(|analytic|, |numeric|, 1).
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], rel_tol: f64) -> core::result::Result<(), String>
where
    F: for<'a> Fn(&'a Tape<f64>, &[Var<'a, f64>]) -> Result<Var<'a, f64>>,
{
    let eval = |tensors: &[Tensor<f64>]| -> core::result::Result<f64, String> {
        let tape = Tape::new();
        let vars: Vec<Var<'_, f64>> = tensors.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&tape, &vars).map_err(|e| format!("forward failed: {e}"))?;
        let v = out.value();
        if v.len() != 1 {
            return Err(format!("gradcheck needs a scalar output, got {:?}", v.shape()));
        }
        Ok(v.item())
    };

    // Analytic gradients.
    let tape = Tape::new();
    let vars: Vec<Var<'_, f64>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars).map_err(|e| format!("forward failed: {e}"))?;
    let grads = tape.backward(out).map_err(|e| format!("backward failed: {e}"))?;

    for (ti, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[ti]).cloned();
        for ei in 0..input.len() {
            let mut plus: Vec<Tensor<f64>> = inputs.to_vec();
            let mut minus: Vec<Tensor<f64>> = inputs.to_vec();
            let base = input.data()[ei];
            let h = FD_STEP * base.abs().max(1.0);
            plus[ti].make_mut()[ei] = base + h;
            minus[ti].make_mut()[ei] = base - h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let a = analytic.as_ref().map_or(0.0, |g| g.data()[ei]);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            if err > rel_tol {
                return Err(format!(
                    "input {ti} elem {ei}: analytic {a:.6e} vs numeric {numeric:.6e} (rel err {err:.3e})"
                ));
            }
        }
    }
    Ok(())
}
