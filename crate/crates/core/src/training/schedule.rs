use crate::error::{Error, Result};

/// Steps (1-based) after which a checkpoint is written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointSchedule {
    pub steps: Vec<usize>,
}

impl CheckpointSchedule {
    pub fn contains(&self, step: usize) -> bool {
        self.steps.binary_search(&step).is_ok()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// After the first epoch, after the last step, and at each eighth of the
/// run (rounded half up), deduplicated.
pub fn make_schedule(total_steps: usize, steps_per_epoch: usize) -> Result<CheckpointSchedule> {
    if steps_per_epoch == 0 || total_steps == 0 {
        return Err(Error::Config("checkpoint schedule needs at least one step".into()));
    }
    if total_steps < steps_per_epoch {
        return Err(Error::Config(format!(
            "total steps {total_steps} is less than one epoch ({steps_per_epoch})"
        )));
    }
    let mut steps = vec![steps_per_epoch, total_steps];
    steps.extend((1..8).map(|i| (2 * i * total_steps + 8) / 16).filter(|&s| s > 0));
    steps.sort_unstable();
    steps.dedup();
    Ok(CheckpointSchedule { steps })
}

/// Linear warmup followed by inverse square-root decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseSqrt {
    pub base: f64,
    pub warmup_steps: usize,
}

impl InverseSqrt {
    /// Learning rate for the 1-based optimiser step.
    pub fn at(&self, step: usize) -> f64 {
        let step = step.max(1) as f64;
        let warmup = self.warmup_steps.max(1) as f64;
        if step < warmup {
            self.base * step / warmup
        } else {
            self.base * (warmup / step).sqrt()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listed_schedules() {
        assert_eq!(make_schedule(800, 100).unwrap().steps, vec![100, 200, 300, 400, 500, 600, 700, 800]);
        assert_eq!(make_schedule(80, 7).unwrap().steps, vec![7, 10, 20, 30, 40, 50, 60, 70, 80]);
        assert_eq!(make_schedule(8, 8).unwrap().steps, (1..=8).collect::<Vec<_>>());
    }

    #[test]
    fn bad_schedules() {
        assert!(make_schedule(0, 0).is_err());
        assert!(make_schedule(5, 10).is_err());
    }

    #[test]
    fn rounding_is_half_up() {
        // 12/8 = 1.5 -> 2, 36/8 = 4.5 -> 5
        let s = make_schedule(12, 3).unwrap();
        assert_eq!(s.steps, vec![2, 3, 5, 6, 8, 9, 11, 12]);
    }

    #[test]
    fn warmup_then_decay() {
        let lr = InverseSqrt { base: 5e-4, warmup_steps: 4000 };
        assert!((lr.at(2000) - 2.5e-4).abs() < 1e-12);
        assert!((lr.at(4000) - 5e-4).abs() < 1e-12);
        assert!((lr.at(16000) - 2.5e-4).abs() < 1e-12);
        let none = InverseSqrt { base: 1e-3, warmup_steps: 0 };
        assert!((none.at(1) - 1e-3).abs() < 1e-15);
        assert!((none.at(4) - 5e-4).abs() < 1e-15);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn always_has_first_epoch_and_final(per_epoch in 1usize..200, epochs in 1usize..60) {
                let total = per_epoch * epochs;
                let s = make_schedule(total, per_epoch).unwrap();
                prop_assert!(s.contains(per_epoch));
                prop_assert!(s.contains(total));
                prop_assert!(s.len() <= 9);
                prop_assert!(s.steps.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
