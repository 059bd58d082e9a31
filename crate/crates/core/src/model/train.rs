//! Mini-batch training of the forecasting network.
//!
//! Each iteration draws `batch_size` samples with replacement from the
//! training set (seeded, reproducible), optionally mirrors each drawn
//! sample left-right with probability 1/2, normalizes the location
//! channels, and takes one Adam step on the mean-squared error between
//! predicted and observed future offsets. All three output channels
//! (x, y, scale) contribute equally to the loss.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{hflip, NormStats, Sample};
use crate::tensor::{adam_step, AdamConfig, BnMode, Graph};

use super::{batch_inputs, batch_targets, ModelError, Network};

/// Iteration budget and learning-rate decay plan.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub iterations: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Iterations (0-based) at which the learning rate is multiplied by
    /// `decay_factor`; must be sorted ascending.
    pub decay_points: Vec<usize>,
    pub decay_factor: f64,
}

impl TrainSchedule {
    /// Full-scale schedule: 17,000 iterations of batch 64 at lr 1e-3,
    /// halved after 5,000 / 10,000 / 15,000.
    pub fn standard() -> Self {
        TrainSchedule {
            iterations: 17_000,
            batch_size: 64,
            base_lr: 1e-3,
            decay_points: vec![5_000, 10_000, 15_000],
            decay_factor: 0.5,
        }
    }

    /// Scaled-down schedule for quick experiments: 2,000 iterations with
    /// the same shape (decays at 600 / 1,200 / 1,800).
    pub fn desk() -> Self {
        TrainSchedule {
            iterations: 2_000,
            batch_size: 64,
            base_lr: 1e-3,
            decay_points: vec![600, 1_200, 1_800],
            decay_factor: 0.5,
        }
    }

    /// Learning rate in effect at a 0-based iteration index.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        let decays = self
            .decay_points
            .iter()
            .filter(|&&p| iteration >= p)
            .count();
        self.base_lr * self.decay_factor.powi(decays as i32)
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 {
            return Err(ModelError::Usage("batch size must be positive".to_string()));
        }
        if !(self.base_lr > 0.0) || !(self.decay_factor > 0.0) {
            return Err(ModelError::Usage(
                "learning rate and decay factor must be positive".to_string(),
            ));
        }
        if self.decay_points.windows(2).any(|w| w[0] > w[1]) {
            return Err(ModelError::Usage(
                "decay points must be sorted ascending".to_string(),
            ));
        }
        Ok(())
    }
}

/// Per-iteration record of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    /// Mini-batch MSE (normalized units) at every iteration.
    pub losses: Vec<f64>,
}

impl TrainLog {
    pub fn initial_loss(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

impl Network {
    /// Train in place on `samples`, whose location channels are normalized
    /// with `stats` (targets included; ego and pose channels pass through
    /// raw). With `augment_flip`, each drawn sample is mirrored left-right
    /// with probability 1/2 before normalization. Identical inputs and seed
    /// reproduce the run bit for bit.
    pub fn train(
        &mut self,
        samples: &[Sample],
        stats: &NormStats,
        schedule: &TrainSchedule,
        seed: u64,
        augment_flip: bool,
    ) -> Result<TrainLog, ModelError> {
        schedule.validate()?;
        if samples.is_empty() {
            return Err(ModelError::Usage(
                "training requires a non-empty sample set".to_string(),
            ));
        }
        let tp = self.config().t_prev;
        let tf = self.config().t_future;
        let ego = self.config().ego_dim();
        for (i, s) in samples.iter().enumerate() {
            if s.t_prev() != tp || s.t_future() != tf {
                return Err(ModelError::Usage(format!(
                    "sample {i} has window {}+{}, config expects {tp}+{tf}",
                    s.t_prev(),
                    s.t_future()
                )));
            }
            if let Some(dim) = ego {
                if s.ego_dim() != dim {
                    return Err(ModelError::Usage(format!(
                        "sample {i} has ego width {}, config expects {dim}",
                        s.ego_dim()
                    )));
                }
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut log = TrainLog::default();
        self.set_mode(BnMode::Train);

        for iter in 0..schedule.iterations {
            let lr = schedule.lr_at(iter);
            let mut batch: Vec<Sample> = Vec::with_capacity(schedule.batch_size);
            for _ in 0..schedule.batch_size {
                let idx = rng.gen_range(0..samples.len());
                let s = &samples[idx];
                if augment_flip && rng.gen_bool(0.5) {
                    batch.push(hflip(s, s.frame_width));
                } else {
                    batch.push(s.clone());
                }
            }
            let refs: Vec<&Sample> = batch.iter().collect();
            let (x, e, p) = batch_inputs(&refs, stats, self.config())?;
            let target = batch_targets(&refs, stats, tf)?;

            let mut g = Graph::new();
            let pass = self.forward(&mut g, &x, e.as_ref(), p.as_ref())?;
            let t = g.leaf(&target);
            let loss_id = g.mse_loss(pass.output, t)?;
            let loss = g.value(loss_id).data()[0];
            if !loss.is_finite() {
                return Err(ModelError::Diverged(format!(
                    "non-finite loss at iteration {iter}"
                )));
            }
            g.backward(loss_id)?;
            self.zero_grads();
            self.accumulate_gradients(&g, &pass);
            adam_step(
                self.parameters_mut(),
                &AdamConfig {
                    lr,
                    ..AdamConfig::default()
                },
            )?;
            log.losses.push(loss);
        }
        Ok(log)
    }
}
