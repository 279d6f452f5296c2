use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub train_loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub lr: Option<f64>,
    pub dev_loss: Option<f64>,
}

/// Per-step training trace. Steps are strictly increasing; a dev
/// evaluation at a logged step is merged into that step's record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    fn at(&mut self, step: usize) -> Result<&mut LogRecord> {
        match self.records.last() {
            Some(r) if r.step == step => {}
            Some(r) if r.step > step => {
                return Err(Error::Contract(format!("log step {step} after step {}", r.step)));
            }
            _ => self.records.push(LogRecord {
                step,
                ..LogRecord::default()
            }),
        }
        Ok(self.records.last_mut().expect("just ensured"))
    }

    pub fn log_train(&mut self, step: usize, loss: f64, grad_norm: f64, lr: f64) -> Result<()> {
        let r = self.at(step)?;
        r.train_loss = Some(loss);
        r.grad_norm = Some(grad_norm);
        r.lr = Some(lr);
        Ok(())
    }

    pub fn log_dev(&mut self, step: usize, dev_loss: f64) -> Result<()> {
        self.at(step)?.dev_loss = Some(dev_loss);
        Ok(())
    }

    /// `(step, dev_loss)` for every evaluation.
    pub fn dev_losses(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.dev_loss.map(|d| (r.step, d)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "train_loss", "grad_norm", "lr", "dev_loss"])
            .expect("in-memory write");
        let cell = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                cell(r.train_loss),
                cell(r.grad_norm),
                cell(r.lr),
                cell(r.dev_loss),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let mut log = TrainLog::new();
        for (i, row) in rd.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
            if row.len() != 5 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected 5 columns, got {}", row.len()),
                });
            }
            let num = |j: usize| -> Result<Option<f64>> {
                let s = row[j].trim();
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse().map(Some).map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad number {s:?}"),
                })
            };
            let step: usize = row[0].trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad step {:?}", &row[0]),
            })?;
            if log.records.last().is_some_and(|r| r.step >= step) {
                return Err(Error::Parse {
                    line,
                    msg: "steps must be strictly increasing".into(),
                });
            }
            log.records.push(LogRecord {
                step,
                train_loss: num(1)?,
                grad_norm: num(2)?,
                lr: num(3)?,
                dev_loss: num(4)?,
            });
        }
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_is_exact() {
        let mut log = TrainLog::new();
        log.log_dev(0, 7.123456789012345).unwrap();
        log.log_train(1, 6.5, 0.1 + 0.2, 1e-4 / 3.0).unwrap();
        log.log_train(2, 6.25, 0.5, 2e-4).unwrap();
        log.log_dev(2, 6.0).unwrap();
        let back = TrainLog::from_csv(&log.to_csv()).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.dev_losses(), vec![(0, 7.123456789012345), (2, 6.0)]);
    }

    #[test]
    fn rejects_decreasing_steps() {
        let mut log = TrainLog::new();
        log.log_train(3, 1.0, 1.0, 1.0).unwrap();
        assert!(log.log_dev(2, 1.0).is_err());
        assert!(TrainLog::from_csv("step,train_loss,grad_norm,lr,dev_loss\n2,,,,1\n1,,,,1\n").is_err());
    }
}
