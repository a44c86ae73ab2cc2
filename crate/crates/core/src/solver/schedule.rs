//! Plateau learning-rate decay driven by a running mean of mini-batch losses.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    lr: f64,
    factor: f64,
    patience: usize,
    threshold: f64,
    window: VecDeque<f64>,
    window_sum: f64,
    best: f64,
    bad_iters: usize,
    decays: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, factor: f64, patience: usize, threshold: f64) -> Self {
        Self {
            lr,
            factor,
            patience: patience.max(1),
            threshold,
            window: VecDeque::with_capacity(patience.max(1)),
            window_sum: 0.0,
            best: f64::INFINITY,
            bad_iters: 0,
            decays: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn decays(&self) -> usize {
        self.decays
    }

    /// Mean of the last `patience` losses recorded.
    pub fn running_mean(&self) -> f64 {
        if self.window.is_empty() {
            f64::NAN
        } else {
            self.window_sum / self.window.len() as f64
        }
    }

    /// Record one mini-batch loss and return the learning rate for the next step.
    ///
    /// The monitored value counts as improved when it falls below
    /// `best - threshold * |best|`; after `patience` consecutive iterations
    /// without improvement the rate is multiplied by `factor`.
    pub fn step(&mut self, loss: f64) -> f64 {
        if self.window.len() == self.patience {
            if let Some(old) = self.window.pop_front() {
                self.window_sum -= old;
            }
        }
        self.window.push_back(loss);
        self.window_sum += loss;
        let monitored = self.running_mean();
        if !self.best.is_finite() || monitored < self.best - self.threshold * self.best.abs() {
            self.best = monitored;
            self.bad_iters = 0;
        } else {
            self.bad_iters += 1;
            if self.bad_iters >= self.patience {
                self.lr *= self.factor;
                self.bad_iters = 0;
                self.decays += 1;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decays_after_patience_on_flat_loss() {
        let mut s = PlateauSchedule::new(1.0, 0.9, 10, 0.005);
        for _ in 0..10 {
            s.step(1.0);
        }
        // first step sets the best; nine flat steps do not yet reach patience
        assert_eq!(s.decays(), 0);
        s.step(1.0);
        assert_eq!(s.decays(), 1);
        assert!((s.lr() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn steady_improvement_keeps_rate() {
        let mut s = PlateauSchedule::new(0.5, 0.9, 5, 0.005);
        let mut loss = 100.0;
        for _ in 0..200 {
            loss *= 0.95;
            s.step(loss);
        }
        assert_eq!(s.lr(), 0.5);
    }

    #[test]
    fn running_mean_uses_window() {
        let mut s = PlateauSchedule::new(1.0, 0.9, 3, 0.0);
        for v in [1.0, 2.0, 3.0, 4.0] {
            s.step(v);
        }
        assert!((s.running_mean() - 3.0).abs() < 1e-15);
    }
}
