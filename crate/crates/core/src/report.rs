//! Run records and their key=value rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::train::{LossRow, TrainConfig};

/// Sample mean and standard error (`std(ddof = 1) / sqrt(R)`).
/// The standard error is `None` for fewer than two values.
pub fn mean_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let r = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / r;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0);
    (mean, Some((var / r).sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub losses: Vec<LossRow>,
    pub metrics: BTreeMap<String, f64>,
    pub duration_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub stderr: Option<f64>,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub dataset: String,
    pub model: String,
    pub runs: Vec<RunRecord>,
    pub summary: BTreeMap<String, MetricSummary>,
}

impl EvalReport {
    /// Runs are ordered by index before aggregation.
    pub fn new(task: &str, dataset: &str, model: &str, mut runs: Vec<RunRecord>) -> Self {
        runs.sort_by_key(|r| r.run_index);
        let mut summary = BTreeMap::new();
        if let Some(first) = runs.first() {
            for name in first.metrics.keys() {
                let vals: Vec<f64> = runs
                    .iter()
                    .filter_map(|r| r.metrics.get(name).copied())
                    .collect();
                let (mean, stderr) = mean_stderr(&vals);
                summary.insert(
                    name.clone(),
                    MetricSummary {
                        mean,
                        stderr,
                        runs: vals.len(),
                    },
                );
            }
        }
        EvalReport {
            task: task.to_string(),
            dataset: dataset.to_string(),
            model: model.to_string(),
            runs,
            summary,
        }
    }

    /// One `key=value` per line. A single run prints bare metric names;
    /// several runs print `run.<i>.<metric>` rows then `<metric>.mean` and
    /// `<metric>.stderr`.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "task={}", self.task);
        let _ = writeln!(out, "dataset={}", self.dataset);
        let _ = writeln!(out, "model={}", self.model);
        let _ = writeln!(out, "runs={}", self.runs.len());
        if let [only] = self.runs.as_slice() {
            let _ = writeln!(out, "seed={}", only.seed);
            for (k, v) in &only.metrics {
                let _ = writeln!(out, "{k}={v}");
            }
            let _ = writeln!(out, "duration_secs={:.3}", only.duration_secs);
            return out;
        }
        for r in &self.runs {
            let _ = writeln!(out, "run.{}.seed={}", r.run_index, r.seed);
            for (k, v) in &r.metrics {
                let _ = writeln!(out, "run.{}.{k}={v}", r.run_index);
            }
            let _ = writeln!(
                out,
                "run.{}.duration_secs={:.3}",
                r.run_index, r.duration_secs
            );
        }
        for (k, s) in &self.summary {
            let _ = writeln!(out, "{k}.mean={}", s.mean);
            if let Some(se) = s.stderr {
                let _ = writeln!(out, "{k}.stderr={se}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_standard_error() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3, stderr sqrt(5/3 / 4)
        assert!((se.unwrap() - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[7.0]), (7.0, None));
    }

    fn record(i: usize, auc: f64) -> RunRecord {
        RunRecord {
            run_index: i,
            seed: 10 + i as u64,
            config: TrainConfig::default(),
            losses: vec![],
            metrics: BTreeMap::from([("auc".to_string(), auc)]),
            duration_secs: 1.0,
        }
    }

    #[test]
    fn key_value_layout() {
        let single = EvalReport::new("link", "cora", "arga", vec![record(0, 0.9)]);
        let text = single.to_key_value();
        assert!(text.lines().any(|l| l == "auc=0.9"));
        assert!(text.lines().all(|l| l.contains('=')));

        let many = EvalReport::new("link", "cora", "arga", vec![record(1, 0.8), record(0, 0.9)]);
        let text = many.to_key_value();
        let lines: Vec<&str> = text.lines().collect();
        let first_run = lines.iter().position(|l| l.starts_with("run.0.")).unwrap();
        let second_run = lines.iter().position(|l| l.starts_with("run.1.")).unwrap();
        assert!(first_run < second_run);
        assert!(lines.contains(&"auc.mean=0.8500000000000001") || lines.contains(&"auc.mean=0.85"));
        assert!(lines.iter().any(|l| l.starts_with("auc.stderr=")));
    }
}
