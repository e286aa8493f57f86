/// Halves (or scales by `factor`) the learning rate after `patience`
/// consecutive evaluations without a new minimum of the monitored loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ReduceOnPlateau {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    lr: f64,
    best: f64,
    bad: usize,
}

impl ReduceOnPlateau {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        Self {
            factor,
            patience,
            min_lr,
            lr,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one evaluation (lower is better) and returns the new rate.
    pub fn step(&mut self, metric: f64) -> f64 {
        if metric < self.best {
            self.best = metric;
            self.bad = 0;
        } else {
            self.bad += 1;
            if self.bad >= self.patience {
                if self.lr > self.min_lr {
                    self.lr = (self.lr * self.factor).max(self.min_lr);
                }
                self.bad = 0;
            }
        }
        self.lr
    }
}
