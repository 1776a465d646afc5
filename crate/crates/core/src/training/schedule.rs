use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::data::Task;

/// Unnormalized task sampling weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskRatios {
    pub asr: f64,
    pub mt: f64,
    pub st: f64,
}

impl TaskRatios {
    pub fn pretrain() -> Self {
        Self {
            asr: 0.2,
            mt: 0.8,
            st: 0.0,
        }
    }

    pub fn finetune() -> Self {
        Self {
            asr: 0.2,
            mt: 0.2,
            st: 0.6,
        }
    }

    pub fn only(task: Task) -> Self {
        let mut r = Self::default();
        *r.weight_mut(task) = 1.0;
        r
    }

    pub fn weight(&self, task: Task) -> f64 {
        match task {
            Task::Asr => self.asr,
            Task::Mt => self.mt,
            Task::St => self.st,
        }
    }

    fn weight_mut(&mut self, task: Task) -> &mut f64 {
        match task {
            Task::Asr => &mut self.asr,
            Task::Mt => &mut self.mt,
            Task::St => &mut self.st,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        for task in Task::ALL {
            let w = self.weight(task);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(TrainError::Config(format!("ratio for {task} must be a non-negative number, got {w}")));
            }
        }
        if self.total() <= 0.0 {
            return Err(TrainError::Config("task ratios are all zero".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.asr + self.mt + self.st
    }

    pub fn probability(&self, task: Task) -> f64 {
        self.weight(task) / self.total()
    }

    /// Tasks with positive weight.
    pub fn active(&self) -> Vec<Task> {
        Task::ALL.into_iter().filter(|&t| self.weight(t) > 0.0).collect()
    }
}

/// Draws task `i` with probability `alpha_i / sum(alpha)`. Consumes one uniform draw.
pub fn sample_task<R: Rng>(ratios: &TaskRatios, rng: &mut R) -> Result<Task, TrainError> {
    ratios.validate()?;
    let x = rng.random::<f64>() * ratios.total();
    let mut acc = 0.0;
    let mut last = Task::St;
    for task in Task::ALL {
        let w = ratios.weight(task);
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = task;
        if x < acc {
            return Ok(task);
        }
    }
    Ok(last)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub scale_k: f64,
    pub d_model: usize,
    pub warmup_n: usize,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.scale_k > 0.0 && self.scale_k.is_finite()) || self.d_model == 0 || self.warmup_n == 0 {
            return Err(TrainError::Config("schedule scale_k, d_model and warmup_n must be positive".into()));
        }
        Ok(())
    }
}

/// `k * d^-0.5 * min(n^-0.5, n * warmup^-1.5)` for step `n >= 1`.
pub fn lrate(n: usize, cfg: &ScheduleConfig) -> Result<f64, TrainError> {
    if n < 1 {
        return Err(TrainError::Step(n));
    }
    cfg.validate()?;
    let n = n as f64;
    let decay = n.powf(-0.5);
    let warm = n * (cfg.warmup_n as f64).powf(-1.5);
    Ok(cfg.scale_k * (cfg.d_model as f64).powf(-0.5) * decay.min(warm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_task_always_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = TaskRatios::only(Task::Mt);
        assert!((0..1000).all(|_| sample_task(&r, &mut rng).unwrap() == Task::Mt));
    }

    #[test]
    fn zero_ratios_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_task(&TaskRatios::default(), &mut rng).is_err());
        let neg = TaskRatios { asr: -1.0, mt: 2.0, st: 0.0 };
        assert!(sample_task(&neg, &mut rng).is_err());
    }

    #[test]
    fn step_zero_rejected() {
        let cfg = ScheduleConfig {
            scale_k: 10.0,
            d_model: 256,
            warmup_n: 25000,
        };
        assert!(matches!(lrate(0, &cfg), Err(TrainError::Step(0))));
    }

    #[test]
    fn branches_meet_at_warmup() {
        let cfg = ScheduleConfig {
            scale_k: 1.0,
            d_model: 16,
            warmup_n: 400,
        };
        let at = lrate(400, &cfg).unwrap();
        assert!((at - 0.25 / 20.0).abs() < 1e-15);
        assert!(lrate(399, &cfg).unwrap() < at);
        assert!(lrate(401, &cfg).unwrap() < at);
    }
}
