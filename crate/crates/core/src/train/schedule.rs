/// Linear warmup from zero to `base_lr`, then linear decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LinearSchedule {
    /// Warmup covers `ceil(warmup_proportion * total_steps)` steps.
    pub fn new(base_lr: f64, warmup_proportion: f64, total_steps: u64) -> Self {
        let warmup_steps = (warmup_proportion * total_steps as f64).ceil() as u64;
        LinearSchedule {
            base_lr,
            warmup_steps: warmup_steps.min(total_steps),
            total_steps,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let decay = self.total_steps.saturating_sub(self.warmup_steps);
        if decay == 0 {
            return self.base_lr;
        }
        let left = self.total_steps.saturating_sub(step);
        self.base_lr * left as f64 / decay as f64
    }
}
