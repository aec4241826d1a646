//! Seeded batches of trials and their summary statistics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_trial, Quadrant, TrialResult, Variant};
use crate::simworld::ScenarioConfig;
use crate::Result;

/// Sample mean and standard deviation; `n == 0` leaves both undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { n, mean: None, std: None };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self { n, mean: Some(mean), std: Some(var.sqrt()) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrantRate {
    pub n_total: usize,
    pub n_success: usize,
    pub asr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub variant: Variant,
    pub config_digest: String,
    pub first_seed: u64,
    pub n_total: usize,
    pub n_success: usize,
    pub asr: f64,
    /// 95% Wilson score interval.
    pub asr_ci: (f64, f64),
    pub d_min: Stat,
    pub tnl: Stat,
    pub energy: Stat,
    pub quadrants: BTreeMap<Quadrant, QuadrantRate>,
}

/// 95% Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = n as f64;
    let p = k as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

impl BatchReport {
    pub fn from_results(config: &ScenarioConfig, variant: Variant, results: &[TrialResult]) -> Self {
        let n_total = results.len();
        let ok: Vec<&TrialResult> = results.iter().filter(|r| r.success).collect();
        let n_success = ok.len();
        let collect =
            |f: &dyn Fn(&TrialResult) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
        let mut quadrants = BTreeMap::new();
        for q in Quadrant::ALL {
            let n_total = results.iter().filter(|r| r.quadrant == q).count();
            let n_success = results.iter().filter(|r| r.quadrant == q && r.success).count();
            let asr = (n_total > 0).then(|| n_success as f64 / n_total as f64);
            quadrants.insert(q, QuadrantRate { n_total, n_success, asr });
        }
        Self {
            variant,
            config_digest: config.digest(),
            first_seed: config.seed,
            n_total,
            n_success,
            asr: if n_total == 0 { 0.0 } else { n_success as f64 / n_total as f64 },
            asr_ci: wilson_interval(n_success, n_total),
            d_min: Stat::of(&collect(&|r| Some(r.d_min))),
            tnl: Stat::of(&collect(&|r| r.tnl)),
            energy: Stat::of(&collect(&|r| r.energy)),
            quadrants,
        }
    }

    pub fn quadrant_asr(&self, q: Quadrant) -> Option<f64> {
        self.quadrants.get(&q).and_then(|r| r.asr)
    }
}

/// Pretty-printed JSON array of reports.
pub fn reports_to_json(reports: &[BatchReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

/// Runs seeds `config.seed .. config.seed + n` in parallel; results come
/// back in seed order.
pub fn run_trials(config: &ScenarioConfig, variant: Variant, n: usize) -> Result<Vec<TrialResult>> {
    (0..n as u64).into_par_iter().map(|k| run_trial(&config.with_seed(config.seed + k), variant)).collect()
}

pub fn run_batch(config: &ScenarioConfig, variant: Variant, n: usize) -> Result<(BatchReport, Vec<TrialResult>)> {
    let results = run_trials(config, variant, n)?;
    Ok((BatchReport::from_results(config, variant, &results), results))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_basics() {
        let s = Stat::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, Some(2.0));
        assert!((s.std.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(Stat::of(&[]).mean, None);
        assert_eq!(Stat::of(&[4.0]).std, Some(0.0));
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(50, 50);
        assert!(hi == 1.0 && lo > 0.9 && lo < 1.0);
        let (lo, hi) = wilson_interval(0, 10);
        assert!(lo == 0.0 && hi > 0.0);
        let (lo, hi) = wilson_interval(25, 50);
        assert!((0.5 - lo - (hi - 0.5)).abs() < 1e-12);
    }
}
