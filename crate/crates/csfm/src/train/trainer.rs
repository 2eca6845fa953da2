//! The training loop: sample a batch, forward, L1 loss, backprop, Adam.
//!
//! Every iteration draws its batch from a ChaCha8 stream keyed by
//! `(seed, iteration)`, so a resumed run consumes exactly the same batches
//! as an uninterrupted one — determinism needs no RNG state in checkpoints,
//! only the seed and the step counter.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::CsfmNetwork;
use crate::tensor::Tape;
use crate::train::checkpoint::{save_checkpoint, LoadedCheckpoint, TrainState};
use crate::train::data::SrDataset;
use crate::train::loss::l1_loss;
use crate::train::optim::{Adam, GradMap};
use crate::train::schedule::LrSchedule;

/// Training hyperparameters.
///
/// The defaults are the reference recipe: 48-pixel low-resolution patches in
/// batches of 16, Adam with beta1 0.9 / beta2 0.999 / eps 1e-8 at a base
/// rate of 1e-4, 900k iterations, augmentation on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Low-resolution patch side; the high-resolution member is scale times
    /// larger.
    pub patch_size: usize,
    pub batch_size: usize,
    pub total_iters: u64,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seed of the per-iteration batch RNG.
    pub seed: u64,
    /// Random flips and quarter rotations of each patch pair.
    pub augment: bool,
    /// Checkpoint every this many iterations (0 = only at the end).
    pub save_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_size: 48,
            batch_size: 16,
            total_iters: 900_000,
            base_lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            augment: true,
            save_every: 10_000,
        }
    }
}

/// What one completed iteration looked like.
#[derive(Clone, Copy, Debug)]
pub struct IterStat {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Owns a network mid-training together with its optimizer and schedule.
pub struct Trainer {
    net: CsfmNetwork<f32>,
    adam: Adam<f32>,
    schedule: LrSchedule,
    cfg: TrainConfig,
    rgb_mean: [f64; 3],
}

impl Trainer {
    /// Starts a fresh run on `net`. `rgb_mean` is the per-channel mean the
    /// dataset reports; it is stored in checkpoints so inference can undo
    /// the same shift.
    pub fn new(net: CsfmNetwork<f32>, rgb_mean: [f64; 3], cfg: TrainConfig) -> Result<Trainer> {
        let adam = Adam::new(cfg.beta1, cfg.beta2, cfg.eps)?;
        let schedule = LrSchedule::new(cfg.base_lr, cfg.total_iters)?;
        Ok(Trainer {
            net,
            adam,
            schedule,
            cfg,
            rgb_mean,
        })
    }

    /// Resumes from a checkpoint that carries training state. Optimizer
    /// hyperparameters, the schedule, and the seed come from the file;
    /// `cfg` supplies only the data-pipeline knobs (patch, batch,
    /// augmentation, save cadence).
    pub fn from_checkpoint(loaded: LoadedCheckpoint, mut cfg: TrainConfig) -> Result<Trainer> {
        let LoadedCheckpoint {
            net,
            rgb_mean,
            step,
            train,
        } = loaded;
        let state = train.ok_or_else(|| {
            Error::Checkpoint(
                "checkpoint holds weights only and cannot resume training".into(),
            )
        })?;
        cfg.base_lr = state.base_lr;
        cfg.beta1 = state.beta1;
        cfg.beta2 = state.beta2;
        cfg.eps = state.eps;
        cfg.total_iters = state.total_iters;
        cfg.seed = state.seed;
        let adam = Adam::restore(state.beta1, state.beta2, state.eps, step, state.moments)?;
        let schedule = LrSchedule::new(state.base_lr, state.total_iters)?;
        Ok(Trainer {
            net,
            adam,
            schedule,
            cfg,
            rgb_mean,
        })
    }

    pub fn net(&self) -> &CsfmNetwork<f32> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut CsfmNetwork<f32> {
        &mut self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn rgb_mean(&self) -> [f64; 3] {
        self.rgb_mean
    }

    /// Iterations completed so far.
    pub fn step_count(&self) -> u64 {
        self.adam.t()
    }

    /// Writes the weights and full training state to `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut moments = Vec::new();
        self.net.for_each_param(&mut |name, tensor| {
            let (m, v) = match self.adam.moments_of(name) {
                Some((m, v)) => (m.to_vec(), v.to_vec()),
                None => (vec![0f32; tensor.numel()], vec![0f32; tensor.numel()]),
            };
            moments.push((name.to_string(), m, v));
        });
        let state = TrainState {
            beta1: self.adam.beta1(),
            beta2: self.adam.beta2(),
            eps: self.adam.eps(),
            base_lr: self.schedule.base_lr(),
            total_iters: self.schedule.total_iters(),
            seed: self.cfg.seed,
            moments,
        };
        save_checkpoint(path, &self.net, self.rgb_mean, self.adam.t(), Some(&state))
    }

    /// Runs one iteration: deterministic batch, forward pass, L1 loss,
    /// backprop, Adam step. A non-finite loss aborts *before* the update,
    /// leaving the trainer at the last good state.
    pub fn train_iteration(&mut self, data: &SrDataset) -> Result<IterStat> {
        if data.scale() != self.net.config().scale {
            return Err(Error::Config(format!(
                "dataset is prepared for x{} but the network upscales x{}",
                data.scale(),
                self.net.config().scale
            )));
        }
        let iter = self.adam.t() + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(iter);
        let (lr_batch, hr_batch) = data.sample_batch::<f32, _>(
            &mut rng,
            self.cfg.patch_size,
            self.cfg.batch_size,
            self.cfg.augment,
        )?;

        let mut tape = Tape::new();
        self.net.watch(&mut tape);
        let pred = self.net.forward(&mut tape, &lr_batch)?;
        let loss_t = l1_loss(&mut tape, &pred, &hr_batch)?;
        let loss = loss_t.data()[0] as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric {
                op: "train",
                detail: format!("loss became {loss} at iteration {iter}"),
            });
        }
        tape.backward(&loss_t)?;

        let mut grads: GradMap<f32> = GradMap::new();
        self.net.for_each_param(&mut |name, tensor| {
            if let Some(g) = tape.grad(tensor) {
                grads.insert(name.to_string(), g.to_vec());
            }
        });
        drop(tape);
        let lr = self.adam.step(&self.schedule, &mut self.net, &grads)?;
        Ok(IterStat { iter, lr, loss })
    }

    /// Trains until iteration `until` (clamped to the schedule's total),
    /// reporting each iteration through `on_iter`.
    ///
    /// When `checkpoint_path` is given, the trainer saves there every
    /// `save_every` iterations, once more on normal exit, and — if the loss
    /// turns non-finite — once with the last good state before returning the
    /// error.
    pub fn run(
        &mut self,
        data: &SrDataset,
        until: u64,
        checkpoint_path: Option<&Path>,
        on_iter: &mut dyn FnMut(&IterStat),
    ) -> Result<()> {
        let until = until.min(self.schedule.total_iters());
        while self.adam.t() < until {
            match self.train_iteration(data) {
                Ok(stat) => {
                    on_iter(&stat);
                    if let Some(path) = checkpoint_path {
                        if self.cfg.save_every > 0 && stat.iter % self.cfg.save_every == 0 {
                            self.save(path)?;
                        }
                    }
                }
                Err(e) => {
                    if let (Some(path), Error::Numeric { .. }) = (checkpoint_path, &e) {
                        self.save(path)?;
                    }
                    return Err(e);
                }
            }
        }
        if let Some(path) = checkpoint_path {
            self.save(path)?;
        }
        Ok(())
    }
}
