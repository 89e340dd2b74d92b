use super::Tensor;
use crate::error::{Error, Result};

fn check_rates(lr: f64, weight_decay: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
        return Err(Error::Config(format!(
            "weight decay must be non-negative, got {weight_decay}"
        )));
    }
    Ok(())
}

/// `p <- p - lr * (g + weight_decay * p)`, elementwise.
pub fn sgd_update(params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) -> Result<()> {
    check_rates(lr, weight_decay)?;
    if params.len() != grads.len() {
        return Err(Error::dimension("sgd_update", params.len(), grads.len()));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * (g + weight_decay * *p);
    }
    Ok(())
}

/// Applies [`sgd_update`] to every tensor that holds a gradient. Tensors
/// without a gradient buffer still receive weight decay.
pub fn sgd_step(params: &mut [&mut Tensor], lr: f64, weight_decay: f64) -> Result<()> {
    check_rates(lr, weight_decay)?;
    for p in params.iter_mut() {
        let g = p.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]);
        sgd_update(p.data_mut(), &g, lr, weight_decay)?;
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm <= 0` disables clipping.
pub fn clip_grad_norm(params: &mut [&mut Tensor], max_norm: f64) -> Result<f64> {
    let norm = params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(g) = p.grad() {
                let delta: Vec<f64> = g.iter().map(|v| v * (scale - 1.0)).collect();
                p.accumulate_grad(&delta)?;
            }
        }
    }
    Ok(norm)
}
