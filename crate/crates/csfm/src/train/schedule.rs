//! Step-halving learning-rate schedule.
//!
//! The reference training protocol runs 900k updates, halving the rate
//! after 300k and then after every further 200k. Shorter (or longer) runs
//! scale those milestones proportionally, so a 2,000-iteration desk run
//! sees the same relative decay profile.

use crate::error::{Error, Result};

/// Reference run length the milestones are defined against.
const REFERENCE_TOTAL: f64 = 9e5;
/// First halving point of the reference run.
const REFERENCE_FIRST_DROP: f64 = 3e5;
/// Spacing of subsequent halvings in the reference run.
const REFERENCE_DROP_EVERY: f64 = 2e5;

/// Learning rate as a function of the 1-based update counter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    base_lr: f64,
    total_iters: u64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_iters: u64) -> Result<LrSchedule> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "base learning rate must be positive and finite, got {base_lr}"
            )));
        }
        if total_iters == 0 {
            return Err(Error::Config("total iterations must be positive".into()));
        }
        Ok(LrSchedule {
            base_lr,
            total_iters,
        })
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    pub fn total_iters(&self) -> u64 {
        self.total_iters
    }

    /// Learning rate for update `t` (1-based): the base rate divided by two
    /// for every milestone already passed. Milestones sit at
    /// `300k * (total / 900k)` and every `200k * (total / 900k)` after.
    pub fn lr_at(&self, t: u64) -> f64 {
        debug_assert!(t >= 1, "updates are counted from 1");
        let scale = self.total_iters as f64 / REFERENCE_TOTAL;
        let first = REFERENCE_FIRST_DROP * scale;
        let every = REFERENCE_DROP_EVERY * scale;
        let td = t as f64;
        let halvings = if td <= first {
            0
        } else {
            ((td - first) / every).ceil() as i32
        };
        self.base_lr * 0.5f64.powi(halvings)
    }
}
