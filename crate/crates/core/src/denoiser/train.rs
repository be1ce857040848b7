//! Toy training loop: ε-prediction MSE with condition dropout and Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Denoiser, Params};
use crate::error::{Error, Result};
use crate::schedule::{forward_noise, NoiseSchedule};
use crate::text::TextCondition;
use crate::video::LatentVideo;

#[derive(Debug, Clone)]
pub struct TrainExample {
    pub latent: LatentVideo,
    pub caption: TextCondition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Final learning rate as a fraction of the peak (cosine decay).
    pub final_lr_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    /// Probability of replacing the caption by the null prompt.
    pub p_drop: f64,
    pub ema_decay: f64,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch_size: 8,
            learning_rate: 2e-3,
            warmup_steps: 200,
            final_lr_ratio: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            p_drop: 0.1,
            ema_decay: 0.99,
            log_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.p_drop) {
            return bad("p_drop must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let p = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * p).cos());
        self.learning_rate * (self.final_lr_ratio + (1.0 - self.final_lr_ratio) * cos)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    /// Loss EMA after the first step.
    pub initial_loss_ema: f64,
    pub final_loss_ema: f64,
    /// `(step, loss_ema)` every `log_every` steps.
    pub history: Vec<(usize, f64)>,
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut Params, grads: &Params, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let gv = grads.views();
        let iter = params
            .views_mut()
            .into_iter()
            .zip(self.m.views_mut())
            .zip(self.v.views_mut())
            .zip(gv);
        for ((((_, p), (_, m)), (_, v)), g) in iter {
            for i in 0..p.len() {
                let gi = g.data[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Trains `model` in place on `data` with the ε-prediction objective. With
/// `steps = 0` the model is returned unchanged. Parameters are rounded to
/// binary32 at the end so the checkpoint is exact.
pub fn train_toy(
    mut model: Denoiser,
    data: &[TrainExample],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(Denoiser, TrainReport)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let null = TextCondition::null(model.config().text_len);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam {
        m: model.params().zeros_like(),
        v: model.params().zeros_like(),
        t: 0,
    };
    let mut ema = f64::NAN;
    let mut initial = f64::NAN;
    let mut history = Vec::new();
    for step in 0..cfg.steps {
        let mut grads = model.params().zeros_like();
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let ex = &data[rng.random_range(0..data.len())];
            let t = rng.random_range(0..schedule.num_steps());
            let eps = LatentVideo::randn(ex.latent.shape(), &mut rng);
            let x_t = forward_noise(&ex.latent, t, &eps, schedule)?;
            let cond = if rng.random::<f64>() < cfg.p_drop {
                &null
            } else {
                &ex.caption
            };
            let (l, g) = model.loss_and_grad(&x_t, schedule.timestep(t), cond, &eps)?;
            loss += l;
            grads.add_scaled(&g, 1.0);
        }
        let inv = 1.0 / cfg.batch_size as f64;
        loss *= inv;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {loss} at step {step}"
            )));
        }
        let norm = grads.sq_norm().sqrt() * inv;
        let clip = if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            cfg.grad_clip / norm
        } else {
            1.0
        };
        let scaled = {
            let mut g = grads.zeros_like();
            g.add_scaled(&grads, inv * clip);
            g
        };
        adam.step(model.params_mut(), &scaled, cfg.lr_at(step), cfg);
        if !model.params().all_finite() {
            return Err(Error::NonFinite(format!(
                "parameters diverged at step {step}"
            )));
        }

        if step == 0 {
            ema = loss;
            initial = loss;
        } else {
            ema = cfg.ema_decay * ema + (1.0 - cfg.ema_decay) * loss;
        }
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            log::info!(
                "step {:>6}  loss_ema {:.5}  lr {:.2e}",
                step + 1,
                ema,
                cfg.lr_at(step)
            );
            history.push((step + 1, ema));
        }
    }
    model.params_mut().round_to_f32();
    Ok((
        model,
        TrainReport {
            steps: cfg.steps,
            initial_loss_ema: initial,
            final_loss_ema: ema,
            history,
        },
    ))
}
