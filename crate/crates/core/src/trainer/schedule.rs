use super::TrainError;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Cosine annealing with warm restarts. Cycle `i` lasts
/// `cycle_len * cycle_mult^i` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdrSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub cycle_len: usize,
    pub cycle_mult: usize,
    pub steps_per_epoch: usize,
}

impl SgdrSchedule {
    /// `lr_min` defaults to `lr_max / 100`.
    pub fn new(lr_max: f64, cycle_len: usize, cycle_mult: usize, steps_per_epoch: usize) -> Self {
        Self {
            lr_max,
            lr_min: lr_max / 100.0,
            cycle_len,
            cycle_mult,
            steps_per_epoch,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.lr_max.is_finite()
            && self.lr_min >= 0.0
            && self.lr_max > self.lr_min
            && self.cycle_len >= 1
            && self.cycle_mult >= 1
            && self.steps_per_epoch >= 1;
        if ok {
            Ok(())
        } else {
            Err(TrainError::InvalidPlan(format!("invalid schedule {self:?}")))
        }
    }

    /// Length of cycle `i` in epochs.
    pub fn cycle_epochs(&self, i: usize) -> usize {
        self.cycle_len * self.cycle_mult.pow(i as u32)
    }

    /// Cumulative epoch at which each of the first `n` cycles starts.
    pub fn restart_epochs(&self, n: usize) -> Vec<usize> {
        (0..n).scan(0, |start, i| {
            let s = *start;
            *start += self.cycle_epochs(i);
            Some(s)
        })
        .collect()
    }

    /// Total epochs spanned by the first `n` cycles.
    pub fn epochs_for_cycles(&self, n: usize) -> usize {
        (0..n).map(|i| self.cycle_epochs(i)).sum()
    }

    /// `(cycle index, step within cycle, cycle length in steps)`.
    pub fn locate(&self, step: usize) -> (usize, usize, usize) {
        let mut pos = step;
        let mut len = self.cycle_len * self.steps_per_epoch;
        let mut cycle = 0;
        while pos >= len {
            pos -= len;
            len *= self.cycle_mult;
            cycle += 1;
        }
        (cycle, pos, len)
    }

    /// Closed form at fractional position `t / T_i` inside a cycle.
    pub fn lr_at_fraction(&self, frac: f64) -> f64 {
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (PI * frac).cos())
    }

    pub fn lr(&self, step: usize) -> f64 {
        let (_, pos, len) = self.locate(step);
        self.lr_at_fraction(pos as f64 / len as f64)
    }
}

pub fn sgdr_lr(step: usize, schedule: &SgdrSchedule) -> f64 {
    schedule.lr(step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restarts_double() {
        let s = SgdrSchedule::new(0.1, 1, 2, 5);
        assert_eq!(s.restart_epochs(5), vec![0, 1, 3, 7, 15]);
        for e in [0, 1, 3, 7, 15] {
            assert_eq!(s.lr(e * 5), 0.1);
        }
        assert_eq!(s.locate(15 * 5), (4, 0, 80));
    }

    #[test]
    fn cycle_end_is_lr_min() {
        let s = SgdrSchedule::new(1.0, 2, 1, 3);
        assert!((s.lr_at_fraction(1.0) - s.lr_min).abs() < 1e-15);
        assert!((s.lr_min - 0.01).abs() < 1e-15);
    }

    #[test]
    fn strictly_decreasing_inside_cycle() {
        let s = SgdrSchedule::new(0.5, 1, 2, 7);
        let lrs: Vec<f64> = (7..21).map(|k| s.lr(k)).collect();
        assert!(lrs.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(s.lr(21), 0.5);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(SgdrSchedule::new(0.1, 0, 2, 1).validate().is_err());
        assert!(SgdrSchedule::new(0.0, 1, 2, 1).validate().is_err());
        assert!(SgdrSchedule { lr_min: 0.2, ..SgdrSchedule::new(0.1, 1, 1, 1) }.validate().is_err());
    }
}
