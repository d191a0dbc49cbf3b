//! Pieces shared by the encoder and decoder training loops.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Smallest learning rate the plateau schedule will decay to.
pub const LR_FLOOR: f32 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateauConfig {
    /// Steps per moving-average window.
    pub window: usize,
    /// Consecutive non-improving windows before a decay.
    pub patience: usize,
    /// Relative improvement a window mean must achieve over the best so far.
    pub threshold: f64,
    /// The learning rate is divided by this on each decay.
    pub decay_factor: f32,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            window: 50,
            patience: 5,
            threshold: 0.01,
            decay_factor: 10.0,
        }
    }
}

/// Divides the learning rate when windowed loss means stop improving.
///
/// Losses are averaged over consecutive, non-overlapping windows. A window
/// counts as an improvement when its mean is at least `threshold` (relative)
/// below the best earlier window mean; the very first window has nothing to
/// improve on and counts as stale. After `patience` stale windows in a row
/// the rate is divided by `decay_factor` (clamped at [`LR_FLOOR`]) and the
/// stale count restarts.
#[derive(Clone, Debug)]
pub struct PlateauSchedule {
    cfg: PlateauConfig,
    lr: f32,
    window_sum: f64,
    window_len: usize,
    best: Option<f64>,
    stale: usize,
    decays: usize,
}

impl PlateauSchedule {
    pub fn new(initial_lr: f32, cfg: PlateauConfig) -> Self {
        PlateauSchedule {
            cfg,
            lr: initial_lr,
            window_sum: 0.0,
            window_len: 0,
            best: None,
            stale: 0,
            decays: 0,
        }
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    pub fn decays(&self) -> usize {
        self.decays
    }

    /// Feeds one step's loss; returns the learning rate for the next step.
    pub fn observe(&mut self, loss: f64) -> f32 {
        self.window_sum += loss;
        self.window_len += 1;
        if self.window_len < self.cfg.window.max(1) {
            return self.lr;
        }
        let mean = self.window_sum / self.window_len as f64;
        self.window_sum = 0.0;
        self.window_len = 0;
        match self.best {
            Some(best) if mean <= best * (1.0 - self.cfg.threshold) => {
                self.best = Some(mean);
                self.stale = 0;
            }
            _ => {
                self.best = Some(self.best.map_or(mean, |b| b.min(mean)));
                self.stale += 1;
            }
        }
        if self.stale >= self.cfg.patience.max(1) {
            self.stale = 0;
            let next = (self.lr / self.cfg.decay_factor).max(LR_FLOOR);
            if next < self.lr {
                self.decays += 1;
            }
            self.lr = next;
        }
        self.lr
    }
}

/// Replays a loss history through a fresh schedule.
pub fn replay_schedule(initial_lr: f32, cfg: PlateauConfig, losses: impl IntoIterator<Item = f64>) -> f32 {
    let mut s = PlateauSchedule::new(initial_lr, cfg);
    for l in losses {
        s.observe(l);
    }
    s.lr()
}

/// Seeded epoch-wise shuffling; every item appears once per epoch.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if len == 0 || batch_size == 0 {
            return Err(Error::Data(format!(
                "cannot sample batches of {batch_size} from {len} items"
            )));
        }
        let mut s = BatchSampler {
            order: (0..len).collect(),
            cursor: 0,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        Ok(s)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch_size);
        while out.len() < self.batch_size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

pub(crate) fn check_finite(term: &str, value: f32, step: usize) -> Result<f32> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            term: term.to_string(),
            step,
        })
    }
}

/// Writes one JSON object per line.
pub fn write_log_line<W: Write + ?Sized, T: Serialize>(out: &mut W, record: &T) -> Result<()> {
    let line = serde_json::to_string(record).map_err(|e| Error::Data(e.to_string()))?;
    writeln!(out, "{line}").map_err(|e| Error::io("<step log>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(window: usize, patience: usize) -> PlateauConfig {
        PlateauConfig {
            window,
            patience,
            threshold: 0.01,
            decay_factor: 10.0,
        }
    }

    #[test]
    fn decreasing_history_keeps_lr() {
        let losses = (0..2000).map(|t| 100.0 * 0.99f64.powi(t));
        assert_eq!(replay_schedule(1e-4, cfg(50, 3), losses), 1e-4);
    }

    #[test]
    fn constant_history_decays_once_per_patience_span() {
        let c = cfg(50, 3);
        for spans in 1..4 {
            let mut s = PlateauSchedule::new(1e-2, c);
            for _ in 0..spans * 3 * 50 {
                s.observe(1.0);
            }
            assert_eq!(s.decays(), spans);
            assert!((s.lr() - 1e-2 / 10f32.powi(spans as i32)).abs() < 1e-9);
        }
        // One step short of the first full span: no decay yet.
        assert_eq!(replay_schedule(1e-2, c, std::iter::repeat_n(1.0, 3 * 50 - 1)), 1e-2);
    }

    #[test]
    fn floor_is_respected() {
        let lr = replay_schedule(LR_FLOOR, cfg(5, 1), std::iter::repeat_n(1.0, 100));
        assert_eq!(lr, LR_FLOOR);
        let lr = replay_schedule(2e-8, cfg(5, 1), std::iter::repeat_n(1.0, 100));
        assert_eq!(lr, LR_FLOOR);
    }

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = BatchSampler::new(10, 4, 3).unwrap();
        let mut seen: Vec<usize> = (0..5).flat_map(|_| s.next_batch()).collect();
        seen.truncate(10);
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        let mut a = BatchSampler::new(10, 4, 3).unwrap();
        let mut b = BatchSampler::new(10, 4, 3).unwrap();
        for _ in 0..7 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
    }
}
