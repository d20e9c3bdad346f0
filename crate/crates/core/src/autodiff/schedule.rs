use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

/// One-cycle learning rate: linear ramp from zero to `peak_lr`, then cosine
/// decay down to `peak_lr * final_lr_fraction` at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub peak_lr: f64,
    pub total_steps: u64,
    pub warmup_fraction: f64,
    pub final_lr_fraction: f64,
}

impl OneCycle {
    pub fn new(peak_lr: f64, total_steps: u64) -> Self {
        OneCycle {
            peak_lr,
            total_steps,
            warmup_fraction: 0.3,
            final_lr_fraction: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(arg_err!(
                "warmup fraction {} not in (0, 1)",
                self.warmup_fraction
            ));
        }
        if self.total_steps < 1 {
            return Err(arg_err!("schedule needs at least one step"));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr >= 0.0) {
            return Err(arg_err!("peak learning rate {} invalid", self.peak_lr));
        }
        Ok(())
    }

    /// Last step of the linear ramp, rounded to a whole step and kept
    /// strictly inside `(0, total_steps)` when that is possible.
    pub fn warmup_steps(&self) -> u64 {
        let raw = (self.warmup_fraction * self.total_steps as f64).round() as u64;
        if self.total_steps < 2 {
            return self.total_steps;
        }
        raw.clamp(1, self.total_steps - 1)
    }

    pub fn lr(&self, step: u64) -> Result<f64> {
        self.validate()?;
        if step > self.total_steps {
            return Err(arg_err!(
                "step {step} outside schedule of {} steps",
                self.total_steps
            ));
        }
        let final_lr = self.peak_lr * self.final_lr_fraction;
        if step == 0 {
            return Ok(0.0);
        }
        if step == self.total_steps {
            return Ok(final_lr);
        }
        let warm = self.warmup_steps();
        if step <= warm {
            return Ok(self.peak_lr * step as f64 / warm as f64);
        }
        let t = (step - warm) as f64 / (self.total_steps - warm) as f64;
        Ok(final_lr + (self.peak_lr - final_lr) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_peak() {
        let s = OneCycle::new(0.003, 1000);
        assert_eq!(s.lr(0).unwrap(), 0.0);
        assert_eq!(s.warmup_steps(), 300);
        assert_eq!(s.lr(300).unwrap(), 0.003);
        assert!((s.lr(1000).unwrap() - 0.003 * 1e-4).abs() < 1e-18);
    }

    #[test]
    fn continuous_at_warmup_joint() {
        let s = OneCycle::new(0.003, 1000);
        // Decay formula evaluated exactly at the joint equals the ramp value.
        let warm = s.warmup_steps();
        let final_lr = 0.003 * 1e-4;
        let decay_at_joint = final_lr + (0.003 - final_lr) * 0.5 * (1.0 + 0f64.cos());
        assert!((decay_at_joint - s.lr(warm).unwrap()).abs() < 1e-12);
        let left = s.lr(warm - 1).unwrap();
        let right = s.lr(warm + 1).unwrap();
        assert!(left < 0.003 && right < 0.003);
    }

    #[test]
    fn out_of_range_step_rejected() {
        let s = OneCycle::new(0.003, 10);
        assert!(s.lr(11).is_err());
        let mut bad = s;
        bad.warmup_fraction = 1.0;
        assert!(bad.lr(1).is_err());
    }

    #[test]
    fn monotone_up_then_down() {
        let s = OneCycle::new(0.01, 200);
        let lrs: Vec<f64> = (0..=200).map(|k| s.lr(k).unwrap()).collect();
        let warm = s.warmup_steps() as usize;
        assert!(lrs[..=warm].windows(2).all(|w| w[0] <= w[1]));
        assert!(lrs[warm..].windows(2).all(|w| w[0] >= w[1]));
    }
}
