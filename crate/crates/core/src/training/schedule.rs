use serde::{Deserialize, Serialize};

/// Shape of the KL, teacher-forcing and learning-rate schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub total_epochs: usize,
    pub beta_function: f64,
    pub beta_other: f64,
    /// Fraction of training over which the KL weights rise linearly.
    pub warmup: f64,
    pub tf_start: f64,
    pub tf_end: f64,
    pub lr_start: f64,
    pub lr_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            total_epochs: 30,
            beta_function: 0.5,
            beta_other: 0.01,
            warmup: 0.5,
            tf_start: 0.8,
            tf_end: 0.0,
            lr_start: 1e-3,
            lr_end: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub epoch: usize,
    pub beta_function: f64,
    pub beta_other: f64,
    pub tf_rate: f64,
    pub lr: f64,
}

impl ScheduleState {
    /// Weights used once annealing is complete, with full teacher forcing.
    pub fn evaluation(cfg: &ScheduleConfig) -> Self {
        ScheduleState {
            epoch: cfg.total_epochs,
            beta_function: cfg.beta_function,
            beta_other: cfg.beta_other,
            tf_rate: 1.0,
            lr: 0.0,
        }
    }
}

/// Schedule values at `epoch` of `cfg.total_epochs`. Epoch 0 is the start of
/// training and `total_epochs` the end; both endpoints are exact.
pub fn step_schedule(cfg: &ScheduleConfig, epoch: usize) -> ScheduleState {
    let total = cfg.total_epochs.max(1);
    let epoch_c = epoch.min(total);
    let progress = epoch_c as f64 / total as f64;
    let warm = if cfg.warmup <= 0.0 {
        1.0
    } else {
        (progress / cfg.warmup).min(1.0)
    };
    let (tf_rate, lr) = if epoch_c == 0 {
        (cfg.tf_start, cfg.lr_start)
    } else if epoch_c == total {
        (cfg.tf_end, cfg.lr_end)
    } else {
        (
            cfg.tf_start + (cfg.tf_end - cfg.tf_start) * progress,
            cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(progress),
        )
    };
    ScheduleState {
        epoch,
        beta_function: if warm >= 1.0 { cfg.beta_function } else { cfg.beta_function * warm },
        beta_other: if warm >= 1.0 { cfg.beta_other } else { cfg.beta_other * warm },
        tf_rate,
        lr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_exact() {
        let cfg = ScheduleConfig::default();
        let s0 = step_schedule(&cfg, 0);
        assert_eq!((s0.beta_function, s0.beta_other, s0.tf_rate, s0.lr), (0.0, 0.0, 0.8, 1e-3));
        let s1 = step_schedule(&cfg, 30);
        assert_eq!((s1.beta_function, s1.beta_other, s1.tf_rate, s1.lr), (0.5, 0.01, 0.0, 1e-5));
        assert!((step_schedule(&cfg, 15).lr - 1e-4).abs() < 1e-16);
        assert_eq!(step_schedule(&cfg, 15).beta_function, 0.5);
    }

    #[test]
    fn monotone() {
        let cfg = ScheduleConfig::default();
        let all: Vec<_> = (0..=30).map(|e| step_schedule(&cfg, e)).collect();
        for w in all.windows(2) {
            assert!(w[1].beta_function >= w[0].beta_function);
            assert!(w[1].beta_other >= w[0].beta_other);
            assert!(w[1].tf_rate <= w[0].tf_rate);
            assert!(w[1].lr <= w[0].lr);
        }
    }
}
