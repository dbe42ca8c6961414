//! Central finite differences, used as the independent oracle for the manual
//! backward pass.

use super::{Gradients, Mlp};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `loss_fn` over every parameter, step 1e-5.
pub fn finite_diff_grad<T, F>(params: &Mlp<T>, loss_fn: F) -> Result<Gradients<T>>
where
    T: Scalar,
    F: Fn(&Mlp<T>) -> T,
{
    finite_diff_grad_with_step(params, loss_fn, T::of(FD_STEP))
}

pub fn finite_diff_grad_with_step<T, F>(params: &Mlp<T>, loss_fn: F, step: T) -> Result<Gradients<T>>
where
    T: Scalar,
    F: Fn(&Mlp<T>) -> T,
{
    let mut grads = Gradients::zeros_like(params);
    let mut probe = params.clone();
    let block_lens: Vec<usize> = params.param_blocks().iter().map(|b| b.len()).collect();
    let two_h = step + step;
    for (b, &len) in block_lens.iter().enumerate() {
        for i in 0..len {
            let original = probe.param_blocks()[b][i];
            probe.param_blocks_mut()[b][i] = original + step;
            let plus = loss_fn(&probe);
            probe.param_blocks_mut()[b][i] = original - step;
            let minus = loss_fn(&probe);
            probe.param_blocks_mut()[b][i] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss is not finite at block {b} coordinate {i}"
                )));
            }
            grads.blocks_mut()[b][i] = (plus - minus) / two_h;
        }
    }
    Ok(grads)
}

/// Central-difference gradient of a scalar function of a vector.
pub fn central_difference<T, F>(point: &[T], f: F, step: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&[T]) -> T,
{
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let original = x[i];
        x[i] = original + step;
        let plus = f(&x);
        x[i] = original - step;
        let minus = f(&x);
        x[i] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("function is not finite near coordinate {i}")));
        }
        out.push((plus - minus) / (step + step));
    }
    Ok(out)
}
