//! Optimality weights from trajectory returns.
//!
//! The optimality likelihood is the elite indicator `1[R_k >= R_thd]` with
//! the threshold at the top `elite_fraction` of the batch, evaluated on the
//! member-averaged return. The raw weight of a candidate is
//! `indicator^(1/lambda) * q(a_k)^(-kappa)`, then normalized.

use log::warn;

/// Number of elites for `k` candidates; at least one.
pub fn elite_count(k: usize, elite_fraction: f64) -> usize {
    let n = (elite_fraction * k as f64 - 1e-9).ceil();
    (n.max(1.0) as usize).min(k.max(1))
}

/// Return of the `elite_count`-th best candidate. Candidates tied with it
/// are all elites.
pub fn elite_threshold(returns: &[f64], elite_fraction: f64) -> f64 {
    let mut sorted = returns.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[elite_count(returns.len(), elite_fraction) - 1]
}

/// Normalized weights. `log_q` holds `log q(a_k)` under the proposal the
/// candidates were drawn from; it is only read when `kappa > 0`.
pub fn optimality_weights(
    returns: &[f64],
    lambda: f64,
    kappa: f64,
    elite_fraction: f64,
    log_q: Option<&[f64]>,
) -> Vec<f64> {
    let threshold = elite_threshold(returns, elite_fraction);
    // log of indicator^(1/lambda); lambda > 0 so elites contribute 0 and the
    // rest -inf.
    let mut log_w: Vec<f64> = returns
        .iter()
        .map(|&r| {
            if r >= threshold {
                0.0 / lambda
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    if kappa > 0.0 {
        if let Some(lq) = log_q {
            for (lw, &q) in log_w.iter_mut().zip(lq) {
                if lw.is_finite() {
                    // Densities that underflow to zero get the smallest
                    // positive density rather than an infinite weight.
                    *lw -= kappa * q.max(f64::MIN_POSITIVE.ln());
                }
            }
        }
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        warn!("degenerate optimality weights; falling back to the best candidate");
        let best = returns
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        let mut w = vec![0.0; returns.len()];
        w[best] = 1.0;
        return w;
    }
    raw.iter().map(|r| r / total).collect()
}
