use super::ReplayStorage;
use crate::critic::CriticBank;
use crate::error::{argument, Result};
use crate::policy::PolicyParams;

fn nonempty(storage: &ReplayStorage) -> Result<usize> {
    match storage.window_len() {
        0 => Err(argument("replay window is empty")),
        n => Ok(n),
    }
}

fn cost(obs: &crate::critic::Observation, index: usize) -> Result<f64> {
    obs.costs
        .get(index)
        .copied()
        .ok_or_else(|| argument(format!("cost index {index} out of range")))
}

/// Sample mean of `C'_i` over the window.
pub fn estimate_value(storage: &ReplayStorage, index: usize) -> Result<f64> {
    let n = nonempty(storage)?;
    let mut sum = 0.0;
    for obs in storage.window() {
        sum += cost(obs, index)?;
    }
    Ok(sum / n as f64)
}

pub fn estimate_values(storage: &ReplayStorage, n_costs: usize) -> Result<Vec<f64>> {
    (0..n_costs).map(|i| estimate_value(storage, i)).collect()
}

/// `(1/T) Σ f(ω̄^i; s_l, a_l) ∇_θ log π_θ(a_l | s_l)` at the current policy
/// over the stored (possibly off-policy) observations.
pub fn estimate_gradient(
    storage: &ReplayStorage,
    index: usize,
    critic: &CriticBank,
    policy: &PolicyParams,
) -> Result<Vec<f64>> {
    critic.pair(index)?;
    let n = nonempty(storage)?;
    let mut grad = vec![0.0; policy.num_params()];
    for obs in storage.window() {
        let q = critic.q_value(index, &obs.s, &obs.a)?;
        let score = policy.grad_log_prob(&obs.s, &obs.a)?;
        grad.iter_mut().zip(&score).for_each(|(g, s)| *g += q * s);
    }
    grad.iter_mut().for_each(|g| *g /= n as f64);
    Ok(grad)
}

/// [`estimate_gradient`] for every cost index, sharing one score evaluation
/// per observation. Sums run in window order.
pub fn estimate_gradients(
    storage: &ReplayStorage,
    critic: &CriticBank,
    policy: &PolicyParams,
) -> Result<Vec<Vec<f64>>> {
    let n = nonempty(storage)?;
    let n_theta = policy.num_params();
    let mut grads = vec![vec![0.0; n_theta]; critic.len()];
    for obs in storage.window() {
        let score = policy.grad_log_prob(&obs.s, &obs.a)?;
        let x = critic.features.apply_pair(&obs.s, &obs.a)?;
        for (pair, grad) in critic.pairs.iter().zip(grads.iter_mut()) {
            let q = pair.averaged.evaluate(&x)?[0];
            if q != 0.0 {
                grad.iter_mut().zip(&score).for_each(|(g, s)| *g += q * s);
            }
        }
    }
    for grad in &mut grads {
        grad.iter_mut().for_each(|g| *g /= n as f64);
    }
    Ok(grads)
}

/// Monte-Carlo ablation: the critic value is replaced by the truncated
/// centred return `Σ_{k<len} (C'_i(l+k) − J̃_i)`. Window positions without
/// `len` successors are skipped.
pub fn estimate_gradient_mc(
    storage: &ReplayStorage,
    index: usize,
    policy: &PolicyParams,
    truncation_len: usize,
) -> Result<Vec<f64>> {
    let n = nonempty(storage)?;
    if truncation_len == 0 || n < truncation_len {
        return Err(argument(format!(
            "window of {n} observations is shorter than truncation length {truncation_len}"
        )));
    }
    let window: Vec<_> = storage.window().collect();
    let costs: Vec<f64> = window.iter().map(|o| cost(o, index)).collect::<Result<_>>()?;
    let mean = costs.iter().sum::<f64>() / n as f64;
    let positions = n - truncation_len + 1;
    let mut grad = vec![0.0; policy.num_params()];
    for l in 0..positions {
        let ret: f64 = costs[l..l + truncation_len].iter().map(|c| c - mean).sum();
        if ret == 0.0 {
            continue;
        }
        let score = policy.grad_log_prob(&window[l].s, &window[l].a)?;
        grad.iter_mut().zip(&score).for_each(|(g, s)| *g += ret * s);
    }
    grad.iter_mut().for_each(|g| *g /= positions as f64);
    Ok(grad)
}

/// `(1 − α)·prev + α·fresh` with `α ∈ (0, 1]`.
pub fn recursive_average(prev: f64, fresh: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok((1.0 - alpha) * prev + alpha * fresh)
}

/// Coordinate-wise [`recursive_average`], updating `prev` in place.
pub fn recursive_average_vec(prev: &mut [f64], fresh: &[f64], alpha: f64) -> Result<()> {
    check_alpha(alpha)?;
    if prev.len() != fresh.len() {
        return Err(crate::error::shape("recursive average length mismatch"));
    }
    for (p, f) in prev.iter_mut().zip(fresh) {
        *p = (1.0 - alpha) * *p + alpha * f;
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(argument(format!("averaging step must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}
