//! Weighted-EM refit of the action proposal.
//!
//! With normalized optimality weights `w_k` and responsibilities
//! `eta_m(a_k)` under the current mixture:
//!
//! ```text
//! N_m       = sum_k eta_m(a_k) w_k
//! omega_mk  = eta_m(a_k) w_k / N_m
//! mean_m    = sum_k omega_mk a_k
//! var_m     = sum_k omega_mk (a_k - mean_m)^2
//! pi_m      = N_m / sum_m' N_m'
//! ```
//!
//! followed by the std and weight floors. A single Gaussian with `eta = 1`
//! is the cross-entropy update, and both go through [`weighted_moments`].

use super::gmm::{responsibilities, Component, GmmParams};

/// Normalizes `weights` by their sum and returns
/// `(normalized weights, mean, variance, sum)`, or `None` when the sum is
/// not positive.
pub fn weighted_moments(
    candidates: &[Vec<f64>],
    weights: &[f64],
) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    let total: f64 = weights.iter().sum();
    if !(total > f64::MIN_POSITIVE) || !total.is_finite() {
        return None;
    }
    let omega: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let d = candidates[0].len();
    let mut mean = vec![0.0; d];
    for (a, &o) in candidates.iter().zip(&omega) {
        if o == 0.0 {
            continue;
        }
        for (m, x) in mean.iter_mut().zip(a) {
            *m += o * x;
        }
    }
    let mut var = vec![0.0; d];
    for (a, &o) in candidates.iter().zip(&omega) {
        if o == 0.0 {
            continue;
        }
        for ((v, x), m) in var.iter_mut().zip(a).zip(&mean) {
            *v += o * (x - m) * (x - m);
        }
    }
    Some((omega, mean, var, total))
}

fn floored_std(var: &[f64], floor: f64) -> Vec<f64> {
    var.iter().map(|v| v.sqrt().max(floor)).collect()
}

/// Projects `p` onto `{x : sum x = 1, x_i >= floor}` by raising entries
/// below the floor and rescaling the rest.
pub fn floor_simplex(p: &[f64], floor: f64) -> Vec<f64> {
    let n = p.len();
    if floor * n as f64 >= 1.0 {
        return vec![1.0 / n as f64; n];
    }
    let mut pinned = vec![false; n];
    loop {
        let free_mass: f64 = p
            .iter()
            .zip(&pinned)
            .filter(|(_, &pin)| !pin)
            .map(|(v, _)| v.max(0.0))
            .sum();
        let n_pinned = pinned.iter().filter(|&&x| x).count();
        let budget = 1.0 - n_pinned as f64 * floor;
        let scale = if free_mass > 0.0 { budget / free_mass } else { 0.0 };
        let out: Vec<f64> = p
            .iter()
            .zip(&pinned)
            .map(|(v, &pin)| if pin { floor } else { v.max(0.0) * scale })
            .collect();
        let mut changed = false;
        for (i, v) in out.iter().enumerate() {
            if !pinned[i] && *v < floor {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            return out;
        }
    }
}

/// Standalone cross-entropy refit of a single diagonal Gaussian. Falls back
/// to the previous parameters when every weight is zero.
pub fn cem_update(
    mean: &[f64],
    std: &[f64],
    candidates: &[Vec<f64>],
    weights: &[f64],
    sigma_floor: f64,
) -> (Vec<f64>, Vec<f64>) {
    match weighted_moments(candidates, weights) {
        Some((_, m, var, _)) => (m, floored_std(&var, sigma_floor)),
        None => (mean.to_vec(), std.to_vec()),
    }
}

/// Everything computed by one mixture refit.
#[derive(Debug, Clone, PartialEq)]
pub struct PaetsStep {
    pub phi: GmmParams,
    /// `eta[m][k]` under the pre-update mixture.
    pub responsibilities: Vec<Vec<f64>>,
    /// `omega[m][k]`; all zero for a component with `N_m = 0`.
    pub omega: Vec<Vec<f64>>,
    /// `N_m`.
    pub occupancies: Vec<f64>,
}

/// One weighted-EM update of every component. A component whose occupancy
/// is zero keeps its mean and std and is given the weight floor.
pub fn paets_update(
    phi: &GmmParams,
    candidates: &[Vec<f64>],
    weights: &[f64],
    sigma_floor: f64,
    pi_floor: f64,
) -> PaetsStep {
    let eta = responsibilities(phi, candidates);
    let mut omega = Vec::with_capacity(phi.num_components());
    let mut occupancies = Vec::with_capacity(phi.num_components());
    let mut updated = Vec::with_capacity(phi.num_components());
    for (m, eta_m) in eta.iter().enumerate() {
        let joint: Vec<f64> = eta_m.iter().zip(weights).map(|(e, w)| e * w).collect();
        let prev = &phi.components[m];
        match weighted_moments(candidates, &joint) {
            Some((om, mean, var, n_m)) => {
                omega.push(om);
                occupancies.push(n_m);
                updated.push((mean, floored_std(&var, sigma_floor)));
            }
            None => {
                omega.push(vec![0.0; candidates.len()]);
                occupancies.push(0.0);
                updated.push((prev.mean.clone(), prev.std.clone()));
            }
        }
    }
    let total: f64 = occupancies.iter().sum();
    let raw: Vec<f64> = if total > 0.0 {
        occupancies.iter().map(|n| n / total).collect()
    } else {
        phi.components.iter().map(|c| c.weight).collect()
    };
    let pi = floor_simplex(&raw, pi_floor);
    let components = updated
        .into_iter()
        .zip(pi)
        .map(|((mean, std), weight)| Component { weight, mean, std })
        .collect();
    PaetsStep {
        phi: GmmParams {
            horizon: phi.horizon,
            action_dim: phi.action_dim,
            components,
        },
        responsibilities: eta,
        omega,
        occupancies,
    }
}
