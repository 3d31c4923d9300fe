//! Benchmark result tables and their CSV/JSON exports.
//!
//! Rows are long-format `(model, seed, x, value)` so every experiment writes
//! the same shape; what `x` and `value` mean is documented per experiment in
//! the README. The JSON summary carries run metadata plus five-number
//! statistics of `value` per model.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;

use crate::HarnessError;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub model: String,
    pub seed: u64,
    pub x: f64,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub experiment: String,
    pub config_hash: String,
    pub version: String,
    pub float_width: u32,
    pub timestamp_unix: u64,
    pub rows: Vec<BenchRow>,
    /// Experiment-specific scalars surfaced in the JSON summary.
    pub extras: BTreeMap<String, f64>,
}

impl BenchReport {
    pub fn new(experiment: &str, config_hash: &str) -> Self {
        BenchReport {
            experiment: experiment.to_string(),
            config_hash: config_hash.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            float_width: 64,
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            rows: Vec::new(),
            extras: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, model: &str, seed: u64, x: f64, value: f64) {
        self.rows.push(BenchRow {
            model: model.to_string(),
            seed,
            x,
            value,
        });
    }

    /// Strict long-format CSV: fixed header, one row per line, floats in
    /// shortest round-trip form, no padding, trailing newline.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("model,seed,x,value\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.model, r.seed, r.x, r.value));
        }
        out
    }

    /// Per-model five-number summaries over `value`.
    pub fn model_stats(&self) -> BTreeMap<String, Quantiles> {
        let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            grouped.entry(r.model.clone()).or_default().push(r.value);
        }
        grouped
            .into_iter()
            .filter_map(|(model, values)| quantiles(&values).map(|q| (model, q)))
            .collect()
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let stats: BTreeMap<String, serde_json::Value> = self
            .model_stats()
            .into_iter()
            .map(|(model, q)| {
                (
                    model,
                    json!({
                        "count": q.count,
                        "min": q.min,
                        "q1": q.q1,
                        "median": q.median,
                        "q3": q.q3,
                        "max": q.max,
                        "mean": q.mean,
                    }),
                )
            })
            .collect();
        json!({
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "version": self.version,
            "float_width": self.float_width,
            "timestamp_unix": self.timestamp_unix,
            "rows": self.rows.len(),
            "models": stats,
            "extras": self.extras,
        })
    }

    /// Writes `<experiment>.csv` and `<experiment>.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.experiment));
        std::fs::write(&csv_path, self.to_csv_string())?;
        let json_path = dir.join(format!("{}.json", self.experiment));
        let text = serde_json::to_string_pretty(&self.summary_json())
            .map_err(|e| HarnessError::Runtime(format!("summary serialization failed: {e}")))?;
        std::fs::write(&json_path, text + "\n")?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quantiles {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Five-number summary with linear interpolation between closest ranks.
/// Returns None on an empty slice or any non-finite value.
pub fn quantiles(values: &[f64]) -> Option<Quantiles> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let at = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    };
    Some(Quantiles {
        count: sorted.len(),
        min: sorted[0],
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
        max: sorted[sorted.len() - 1],
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_match_hand_values() {
        // Sorted: 1 2 3 4 5. q1 = 2, median = 3, q3 = 4.
        let q = quantiles(&[5.0, 3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!(q.min, 1.0);
        assert_eq!(q.q1, 2.0);
        assert_eq!(q.median, 3.0);
        assert_eq!(q.q3, 4.0);
        assert_eq!(q.max, 5.0);
        assert_eq!(q.mean, 3.0);

        // Even count interpolates: 1 2 3 4 -> median 2.5, q1 1.75.
        let q = quantiles(&[4.0, 2.0, 1.0, 3.0]).unwrap();
        assert_eq!(q.median, 2.5);
        assert_eq!(q.q1, 1.75);

        assert!(quantiles(&[]).is_none());
        assert!(quantiles(&[1.0, f64::NAN]).is_none());
    }

    #[test]
    fn csv_is_strict_and_roundtrippable() {
        let mut report = BenchReport::new("demo", "cafe");
        report.push("LNN_FD", 1, 2000.0, 0.125);
        report.push("BNN", 1, 10000.0, 0.5);
        let csv = report.to_csv_string();
        assert_eq!(
            csv,
            "model,seed,x,value\nLNN_FD,1,2000,0.125\nBNN,1,10000,0.5\n"
        );
        for line in csv.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 4);
            fields[1].parse::<u64>().unwrap();
            fields[2].parse::<f64>().unwrap();
            fields[3].parse::<f64>().unwrap();
        }
    }

    #[test]
    fn summary_groups_by_model() {
        let mut report = BenchReport::new("demo", "cafe");
        for v in [1.0, 2.0, 3.0] {
            report.push("A", 0, v, v);
        }
        report.push("B", 0, 0.0, 10.0);
        report.extras.insert("ratio".into(), 0.5);
        let s = report.summary_json();
        assert_eq!(s["models"]["A"]["median"], 2.0);
        assert_eq!(s["models"]["B"]["count"], 1);
        assert_eq!(s["extras"]["ratio"], 0.5);
        assert_eq!(s["float_width"], 64);
    }

    #[test]
    fn save_writes_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = BenchReport::new("demo", "cafe");
        report.push("A", 0, 1.0, 2.0);
        report.save(dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("demo.csv")).unwrap();
        assert!(csv.starts_with("model,seed,x,value\n"));
        let text = std::fs::read_to_string(dir.path().join("demo.json")).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["experiment"], "demo");
        assert_eq!(parsed["config_hash"], "cafe");
    }
}
