/// Patience counter over the validation-loss sequence.
///
/// An epoch counts as an improvement when its loss is strictly below the
/// previous epoch's loss minus `min_delta`. Training stops once `patience`
/// consecutive epochs fail to improve. The first epoch always counts as an
/// improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    previous: Option<f64>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            previous: None,
            stale: 0,
        }
    }

    /// Records one epoch's validation loss; returns `true` when training
    /// should stop after this epoch.
    pub fn observe(&mut self, loss: f64) -> bool {
        let improved = match self.previous {
            None => true,
            Some(prev) => loss < prev - self.min_delta,
        };
        self.previous = Some(loss);
        if improved {
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn stale_epochs(&self) -> usize {
        self.stale
    }
}

/// One-based epoch at which the rule stops on `losses`, or `None` if it never
/// triggers within the sequence.
pub fn stopping_epoch(losses: &[f64], patience: usize, min_delta: f64) -> Option<usize> {
    let mut rule = EarlyStopping::new(patience, min_delta);
    losses.iter().position(|&l| rule.observe(l)).map(|i| i + 1)
}
