use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::data::Task;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub task: Task,
    /// NaN when every example of the batch was skipped.
    pub loss: f64,
    pub lrate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub dev_token_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

pub const TRAIN_LOG: &str = "train_log.csv";
pub const EVAL_LOG: &str = "eval_log.csv";

impl TrainingLog {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty() && self.evals.is_empty()
    }

    pub fn train_csv(&self) -> String {
        let mut s = String::from("step,task,loss,lrate\n");
        for r in &self.steps {
            writeln!(s, "{},{},{},{}", r.step, r.task, r.loss, r.lrate).expect("write to string");
        }
        s
    }

    pub fn eval_csv(&self) -> String {
        let mut s = String::from("step,dev_token_accuracy\n");
        for r in &self.evals {
            writeln!(s, "{},{}", r.step, r.dev_token_accuracy).expect("write to string");
        }
        s
    }

    /// Writes `train_log.csv` and `eval_log.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), TrainError> {
        for (name, body) in [(TRAIN_LOG, self.train_csv()), (EVAL_LOG, self.eval_csv())] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|source| TrainError::Io { path, source })?;
        }
        Ok(())
    }

    /// Parses an `eval_log.csv` body.
    pub fn parse_evals(text: &str) -> Result<Vec<EvalRecord>, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some("step,dev_token_accuracy") => {}
            other => return Err(format!("unexpected header {other:?}")),
        }
        lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let bad = || format!("line {}: expected `step,accuracy`, got `{l}`", i + 2);
                let (step, acc) = l.split_once(',').ok_or_else(bad)?;
                Ok(EvalRecord {
                    step: step.trim().parse().map_err(|_| bad())?,
                    dev_token_accuracy: acc.trim().parse().map_err(|_| bad())?,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_of_evals() {
        let log = TrainingLog {
            steps: vec![StepRecord {
                step: 1,
                task: Task::Mt,
                loss: 2.5,
                lrate: 1e-3,
            }],
            evals: vec![
                EvalRecord {
                    step: 0,
                    dev_token_accuracy: 0.125,
                },
                EvalRecord {
                    step: 100,
                    dev_token_accuracy: 0.3,
                },
            ],
        };
        assert_eq!(log.train_csv(), "step,task,loss,lrate\n1,mt,2.5,0.001\n");
        assert_eq!(TrainingLog::parse_evals(&log.eval_csv()).unwrap(), log.evals);
    }
}
