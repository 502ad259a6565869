use crate::error::Result;
use crate::planner::TrajectoryModel;
use crate::rng::StreamRng;

/// `R(a) = -|a - target|^2` over the flat action sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLandscape {
    pub target: f64,
}

impl TrajectoryModel for QuadraticLandscape {
    fn members(&self) -> usize {
        1
    }

    fn rollout_return(&self, _: usize, actions: &[f64], _: &mut StreamRng) -> Result<f64> {
        Ok(-actions.iter().map(|a| (a - self.target).powi(2)).sum::<f64>())
    }
}

/// Two equal Gaussian bumps at `+-center` with width `width`, summed over
/// the action sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct BimodalLandscape {
    pub center: f64,
    pub width: f64,
}

impl Default for BimodalLandscape {
    fn default() -> Self {
        Self {
            center: 0.6,
            width: 0.15,
        }
    }
}

impl BimodalLandscape {
    pub fn reward(&self, a: f64) -> f64 {
        let bump = |c: f64| (-0.5 * ((a - c) / self.width).powi(2)).exp();
        bump(self.center) + bump(-self.center)
    }
}

impl TrajectoryModel for BimodalLandscape {
    fn members(&self) -> usize {
        1
    }

    fn rollout_return(&self, _: usize, actions: &[f64], _: &mut StreamRng) -> Result<f64> {
        Ok(actions.iter().map(|&a| self.reward(a)).sum())
    }
}

/// Local maxima of `f` on a uniform grid of `n` points over `[low, high]`.
pub fn grid_maxima(f: impl Fn(f64) -> f64, low: f64, high: f64, n: usize) -> Vec<f64> {
    let xs: Vec<f64> = (0..n)
        .map(|i| low + (high - low) * i as f64 / (n - 1) as f64)
        .collect();
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    (1..n - 1)
        .filter(|&i| ys[i] > ys[i - 1] && ys[i] >= ys[i + 1])
        .map(|i| xs[i])
        .collect()
}
