//! Scalar and array math shared by the tape ops and by callers that only
//! need forward values.

use crate::nnkit::Arr;
use crate::{P4dError, Result};

/// Smooth-L1 on a single residual `d` with transition point `delta`.
pub fn smooth_l1_elem(d: f64, delta: f64) -> f64 {
    if d.abs() < delta {
        0.5 * d * d / delta
    } else {
        d.abs() - 0.5 * delta
    }
}

/// Derivative of [`smooth_l1_elem`] with respect to `d`.
pub fn smooth_l1_grad_elem(d: f64, delta: f64) -> f64 {
    if d.abs() < delta {
        d / delta
    } else {
        d.signum()
    }
}

/// Mean Smooth-L1 distance between two same-shape arrays.
pub fn smooth_l1(a: &Arr, b: &Arr, delta: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(P4dError::ShapeMismatch(format!(
            "smooth_l1: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if delta <= 0.0 {
        return Err(P4dError::InvalidArgument("smooth_l1: delta must be > 0".into()));
    }
    let acc: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| smooth_l1_elem(x - y, delta))
        .sum();
    Ok(acc / a.len() as f64)
}

/// `-log softmax(logits)[target]`, computed with max-subtraction.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(P4dError::NonFinite("cross_entropy: non-finite logit".into()));
    }
    if target >= logits.len() {
        return Err(P4dError::InvalidArgument(format!(
            "cross_entropy: target {} out of {} classes",
            target,
            logits.len()
        )));
    }
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // keep everything relative to the max so it cancels exactly
    let ln_sum = logits.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
    Ok(ln_sum - (logits[target] - mx))
}

/// Log-softmax of `logits`, max-subtracted.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ln_sum = logits.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
    logits.iter().map(|&v| (v - mx) - ln_sum).collect()
}

/// Sinusoidal encoding of a timestamp `t` into `d` channels with maximum
/// timescale `max_timescale`: even channels `sin(t / T^(2i/d))`, odd channels
/// the matching cosine.
pub fn sinusoidal_encoding(t: f64, d: usize, max_timescale: f64) -> Result<Vec<f64>> {
    if d % 2 != 0 {
        return Err(P4dError::InvalidArgument("sinusoidal_encoding: D must be even".into()));
    }
    if max_timescale <= 0.0 {
        return Err(P4dError::InvalidArgument("sinusoidal_encoding: T must be > 0".into()));
    }
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let divisor = max_timescale.powf(2.0 * i as f64 / d as f64);
        out[2 * i] = (t / divisor).sin();
        out[2 * i + 1] = (t / divisor).cos();
    }
    Ok(out)
}

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// Derivative of the tanh-approximation GELU.
pub fn gelu_grad(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let inner = c * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Linear warmup to `base_lr` over `ceil(warmup_ratio * total_steps)` steps,
/// then cosine decay to zero at `total_steps`.
pub fn cosine_warmup_lr(step: usize, total_steps: usize, warmup_ratio: f64, base_lr: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&warmup_ratio) {
        return Err(P4dError::InvalidArgument(
            "cosine_warmup_lr: warmup_ratio must be in [0, 1)".into(),
        ));
    }
    if step > total_steps {
        return Err(P4dError::InvalidArgument(format!(
            "cosine_warmup_lr: step {step} exceeds total {total_steps}"
        )));
    }
    let warmup = (warmup_ratio * total_steps as f64).ceil() as usize;
    if step < warmup {
        return Ok(base_lr * step as f64 / warmup as f64);
    }
    if total_steps == warmup {
        return Ok(base_lr);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
