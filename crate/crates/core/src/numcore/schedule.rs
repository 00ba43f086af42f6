use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Inverse square-root schedule with linear warmup.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub d_model: usize,
    pub warmup: u64,
    pub scale: f64,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.warmup == 0 || !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("invalid schedule {self:?}")));
        }
        Ok(())
    }
}

/// `scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`
pub fn noam_lr(step: u64, cfg: &ScheduleConfig) -> Result<f64> {
    if step == 0 {
        return Err(Error::Contract("learning-rate schedule starts at step 1".into()));
    }
    cfg.validate()?;
    let s = step as f64;
    let w = cfg.warmup as f64;
    Ok(cfg.scale * (cfg.d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: ScheduleConfig = ScheduleConfig { d_model: 64, warmup: 4000, scale: 1.0 };

    #[test]
    fn first_step_value() {
        // 64^-0.5 * 4000^-1.5 = 0.125 / 252982.2
        let lr = noam_lr(1, &CFG).unwrap();
        assert!((lr - 4.941e-7).abs() < 1e-10, "{lr}");
    }

    #[test]
    fn branches_meet_at_warmup() {
        let w = CFG.warmup as f64;
        assert!((w.powf(-0.5) - w * w.powf(-1.5)).abs() < 1e-15);
        let peak = noam_lr(CFG.warmup, &CFG).unwrap();
        assert!(peak > noam_lr(CFG.warmup - 1, &CFG).unwrap());
        assert!(peak > noam_lr(CFG.warmup + 1, &CFG).unwrap());
    }

    #[test]
    fn decays_as_inverse_square_root() {
        let r = noam_lr(4 * CFG.warmup, &CFG).unwrap() / noam_lr(CFG.warmup, &CFG).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn step_zero_is_rejected() {
        assert!(noam_lr(0, &CFG).is_err());
    }

    #[test]
    fn monotone_on_both_sides_of_warmup() {
        let cfg = ScheduleConfig { d_model: 32, warmup: 50, scale: 2.0 };
        let lrs: Vec<f64> = (1..=200).map(|s| noam_lr(s, &cfg).unwrap()).collect();
        for s in 1..50 {
            assert!(lrs[s] > lrs[s - 1]);
        }
        for s in 50..199 {
            assert!(lrs[s] > lrs[s + 1]);
        }
    }
}
