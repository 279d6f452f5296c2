//! Adapter variance statistics and paired training-run comparisons.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::AdapterWeights;
use crate::scalar::Scalar;
use crate::training::TrainLog;

/// Population variance of `values` around their mean, in f64.
pub fn variance<T: Scalar>(values: &[T]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
    values
        .iter()
        .map(|v| {
            let d = v.to_f64_lossy() - mean;
            d * d
        })
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceStats {
    /// `(tensor name, variance)` in name order.
    pub per_tensor: Vec<(String, f64)>,
    /// Variance of all adapter entries taken together.
    pub pooled: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

pub fn parameter_variance<T: Scalar>(adapter: &AdapterWeights<T>) -> VarianceStats {
    let per_tensor: Vec<(String, f64)> = adapter
        .store()
        .iter()
        .map(|(name, t)| (name.to_string(), variance(t.values())))
        .collect();
    let all: Vec<T> = adapter
        .store()
        .iter()
        .flat_map(|(_, t)| t.values().iter().copied())
        .collect();
    let mut sorted: Vec<f64> = per_tensor.iter().map(|(_, v)| *v).collect();
    sorted.sort_by(f64::total_cmp);
    let median = match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2],
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    };
    VarianceStats {
        pooled: variance(&all),
        min: sorted.first().copied().unwrap_or(0.0),
        median,
        max: sorted.last().copied().unwrap_or(0.0),
        per_tensor,
    }
}

/// One row per (adapter, tensor): `adapter,tensor,variance`.
pub fn export_boxplot_data<T: Scalar>(adapters: &[(&str, &AdapterWeights<T>)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["adapter", "tensor", "variance"])
        .expect("in-memory write");
    for (label, a) in adapters {
        for (name, v) in parameter_variance(a).per_tensor {
            w.write_record([label, name.as_str(), v.to_string().as_str()])
                .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn parse_boxplot_data(text: &str) -> Result<Vec<(String, String, f64)>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    rd.records()
        .enumerate()
        .map(|(i, rec)| {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
            let v = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                line,
                msg: "bad variance".into(),
            })?;
            Ok((rec[0].to_string(), rec[1].to_string(), v))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedStep {
    pub step: usize,
    pub train_loss_delta: Option<f64>,
    pub grad_norm_delta: Option<f64>,
    pub dev_loss_delta: Option<f64>,
}

/// Deltas are `b - a` on the steps both logs share.
#[derive(Debug, Clone, PartialEq)]
pub struct RunComparison {
    pub aligned: Vec<AlignedStep>,
    pub final_dev_delta: Option<f64>,
    pub mean_grad_norm_delta: Option<f64>,
    pub mean_train_loss_delta: Option<f64>,
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn compare_runs(a: &TrainLog, b: &TrainLog) -> Result<RunComparison> {
    let by_step: BTreeMap<usize, _> = b.records().iter().map(|r| (r.step, r)).collect();
    let aligned: Vec<AlignedStep> = a
        .records()
        .iter()
        .filter_map(|ra| {
            let rb = by_step.get(&ra.step)?;
            Some(AlignedStep {
                step: ra.step,
                train_loss_delta: diff(ra.train_loss, rb.train_loss),
                grad_norm_delta: diff(ra.grad_norm, rb.grad_norm),
                dev_loss_delta: diff(ra.dev_loss, rb.dev_loss),
            })
        })
        .collect();
    if aligned.is_empty() {
        return Err(Error::Contract("the two logs share no steps".into()));
    }
    let last_dev = |log: &TrainLog| log.dev_losses().last().map(|(_, d)| *d);
    Ok(RunComparison {
        final_dev_delta: diff(last_dev(a), last_dev(b)),
        mean_grad_norm_delta: mean(aligned.iter().filter_map(|s| s.grad_norm_delta)),
        mean_train_loss_delta: mean(aligned.iter().filter_map(|s| s.train_loss_delta)),
        aligned,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunComparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,train_loss_delta,grad_norm_delta,dev_loss_delta\n");
        for r in &self.aligned {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.step,
                cell(r.train_loss_delta),
                cell(r.grad_norm_delta),
                cell(r.dev_loss_delta)
            ));
        }
        s
    }

    pub fn summary(&self) -> String {
        let show = |v: Option<f64>| v.map(|x| format!("{x:+.6}")).unwrap_or_else(|| "n/a".into());
        format!(
            "aligned steps: {}\nfinal dev loss delta (b - a): {}\nmean grad norm delta (b - a): {}\nmean train loss delta (b - a): {}\n",
            self.aligned.len(),
            show(self.final_dev_delta),
            show(self.mean_grad_norm_delta),
            show(self.mean_train_loss_delta)
        )
    }
}
