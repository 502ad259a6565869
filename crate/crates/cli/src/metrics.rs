use std::fs::File;
use std::path::Path;

use anyhow::Result;

use latent_mpc::agent::IterationRecord;

pub const METRICS_HEADER: [&str; 9] = [
    "iteration",
    "episodes",
    "transitions",
    "member_train_loss",
    "episode_reward",
    "plan_best_r",
    "plan_mean_r",
    "disagreement",
    "wall_seconds",
];

/// One CSV row per outer iteration. Member losses are `;`-joined in one
/// field. Wall-clock seconds are written as 0 unless enabled, which keeps the
/// file reproducible.
pub struct MetricsWriter {
    out: csv::Writer<File>,
    wall_clock: bool,
}

impl MetricsWriter {
    pub fn create(path: &Path, wall_clock: bool) -> Result<Self> {
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(METRICS_HEADER)?;
        out.flush()?;
        Ok(Self { out, wall_clock })
    }

    pub fn write(&mut self, row: &IterationRecord) -> Result<()> {
        let losses: Vec<String> = row.member_train_loss.iter().map(f64::to_string).collect();
        let wall = if self.wall_clock { row.wall_seconds } else { 0.0 };
        self.out.write_record([
            row.iteration.to_string(),
            row.episodes.to_string(),
            row.transitions.to_string(),
            losses.join(";"),
            row.episode_reward.to_string(),
            row.plan_best_return.to_string(),
            row.plan_mean_return.to_string(),
            row.disagreement.to_string(),
            wall.to_string(),
        ])?;
        self.out.flush()?;
        Ok(())
    }
}

/// Linear-interpolation percentile of `values` (`q` in `[0, 100]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 50.0)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert!((percentile(&[0.0, 10.0], 5.0) - 0.5).abs() < 1e-12);
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
    }
}
