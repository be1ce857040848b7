//! Discrete DDPM noise schedules and the per-step transforms built on them.
//!
//! Indexing: step `t` runs over `0..T`. Noise level `t` means
//! `x_t = sqrt(ᾱ_t)·x0 + sqrt(1−ᾱ_t)·ε`; a denoising step at `t` maps level
//! `t` to level `t−1`, where level `−1` is the clean sample (`ᾱ_{−1} = 1`).
//! Consequently the posterior standard deviation at `t = 0` is exactly zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::LatentVideo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaSchedule {
    Linear,
    Cosine,
}

/// A step index together with the time value fed to the denoiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timestep {
    pub index: usize,
    pub model_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    id: String,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_sigmas: Vec<f64>,
    /// Time value presented to the model at each step.
    timesteps: Vec<f64>,
}

/// Length of the training grid that inference schedules are respaced from.
pub const TRAIN_STEPS: usize = 1000;
/// Inference step count used by the deraining pipeline.
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

fn validate_betas(betas: &[f64]) -> Result<()> {
    if betas.len() < 2 {
        return Err(Error::Schedule(format!(
            "need at least 2 steps, got {}",
            betas.len()
        )));
    }
    if let Some((i, b)) = betas
        .iter()
        .enumerate()
        .find(|(_, &b)| !(b > 0.0 && b < 1.0))
    {
        return Err(Error::Schedule(format!("beta[{i}] = {b} outside (0, 1)")));
    }
    Ok(())
}

fn linear_betas(steps: usize, beta_start: f64, beta_end: f64) -> Vec<f64> {
    (0..steps)
        .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
        .collect()
}

fn cosine_betas(steps: usize) -> Vec<f64> {
    let f = |t: f64| {
        let x = (t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)
            * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    (0..steps)
        .map(|i| (1.0 - f(i as f64 + 1.0) / f(i as f64)).min(MAX_BETA))
        .collect()
}

/// Builds a `T`-step schedule with betas taken literally from `kind`.
///
/// For [`BetaSchedule::Cosine`] the beta endpoints are validated but the
/// betas come from the squared-cosine `ᾱ` curve.
pub fn build_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    kind: BetaSchedule,
) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::Schedule(format!(
            "need at least 2 steps, got {steps}"
        )));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Schedule(format!(
            "require 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let betas = match kind {
        BetaSchedule::Linear => linear_betas(steps, beta_start, beta_end),
        BetaSchedule::Cosine => cosine_betas(steps),
    };
    let timesteps = (0..steps).map(|i| i as f64).collect();
    let id = format!("{kind:?}-{steps}-{beta_start:e}-{beta_end:e}").to_lowercase();
    NoiseSchedule::from_betas(betas, timesteps, id)
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>, timesteps: Vec<f64>, id: String) -> Result<Self> {
        validate_betas(&betas)?;
        if timesteps.len() != betas.len() {
            return Err(Error::Schedule(format!(
                "{} timesteps for {} betas",
                timesteps.len(),
                betas.len()
            )));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars: Vec<f64> = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let posterior_sigmas = (0..betas.len())
            .map(|t| {
                if t == 0 {
                    0.0
                } else {
                    (betas[t] * (1.0 - alpha_bars[t - 1]) / (1.0 - alpha_bars[t])).sqrt()
                }
            })
            .collect();
        Ok(Self {
            id,
            betas,
            alphas,
            alpha_bars,
            posterior_sigmas,
            timesteps,
        })
    }

    /// Subsamples a `train_steps` schedule down to `steps` evenly spaced
    /// levels, keeping the training-grid time values for model conditioning.
    pub fn respaced(
        train_steps: usize,
        steps: usize,
        beta_start: f64,
        beta_end: f64,
        kind: BetaSchedule,
    ) -> Result<Self> {
        if steps < 2 || steps > train_steps || train_steps % steps != 0 {
            return Err(Error::Schedule(format!(
                "cannot respace {train_steps} training steps to {steps}"
            )));
        }
        let base = build_schedule(train_steps, beta_start, beta_end, kind)?;
        let stride = train_steps / steps;
        let picked: Vec<usize> = (0..steps).map(|i| i * stride).collect();
        let mut prev = 1.0;
        let mut betas = Vec::with_capacity(steps);
        for &k in &picked {
            let ab = base.alpha_bars[k];
            betas.push(1.0 - ab / prev);
            prev = ab;
        }
        let timesteps = picked.iter().map(|&k| k as f64).collect();
        let id = format!("{}/respaced-{steps}", base.id);
        Self::from_betas(betas, timesteps, id)
    }

    /// The 100-step inference schedule respaced from a 1000-step linear
    /// `1e-4 → 0.02` training grid.
    pub fn default_inference() -> Self {
        Self::respaced(
            TRAIN_STEPS,
            DEFAULT_STEPS,
            DEFAULT_BETA_START,
            DEFAULT_BETA_END,
            BetaSchedule::Linear,
        )
        .expect("default schedule parameters are valid")
    }

    /// The 1000-step training grid matching [`Self::default_inference`].
    pub fn default_training() -> Self {
        build_schedule(
            TRAIN_STEPS,
            DEFAULT_BETA_START,
            DEFAULT_BETA_END,
            BetaSchedule::Linear,
        )
        .expect("default schedule parameters are valid")
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn posterior_sigmas(&self) -> &[f64] {
        &self.posterior_sigmas
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.num_steps() {
            return Err(Error::StepOutOfRange {
                t,
                steps: self.num_steps(),
            });
        }
        Ok(())
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// `ᾱ_{t−1}`, equal to one for `t = 0`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.posterior_sigmas[t]
    }

    pub fn timestep(&self, t: usize) -> Timestep {
        Timestep {
            index: t,
            model_time: self.timesteps[t],
        }
    }

    /// Step indices in denoising order, `T−1` down to `0`.
    pub fn denoising_order(&self) -> impl Iterator<Item = usize> {
        (0..self.num_steps()).rev()
    }
}

/// `sqrt(ᾱ)·x0 + sqrt(1−ᾱ)·eps` for an explicit `ᾱ`.
pub fn noise_with_alpha_bar(
    x0: &LatentVideo,
    eps: &LatentVideo,
    alpha_bar: f64,
) -> Result<LatentVideo> {
    x0.lin_comb(alpha_bar.sqrt(), eps, (1.0 - alpha_bar).sqrt())
}

pub fn forward_noise(
    x0: &LatentVideo,
    t: usize,
    eps: &LatentVideo,
    s: &NoiseSchedule,
) -> Result<LatentVideo> {
    s.check_step(t)?;
    noise_with_alpha_bar(x0, eps, s.alpha_bar(t))
}

/// DDPM posterior mean of level `t−1` given `x_t` and predicted noise.
pub fn ddpm_mu(
    x_t: &LatentVideo,
    eps_hat: &LatentVideo,
    t: usize,
    s: &NoiseSchedule,
) -> Result<LatentVideo> {
    s.check_step(t)?;
    let inv_sqrt_alpha = 1.0 / s.alphas[t].sqrt();
    let eps_coef = s.betas[t] / (1.0 - s.alpha_bars[t]).sqrt();
    x_t.lin_comb(inv_sqrt_alpha, eps_hat, -inv_sqrt_alpha * eps_coef)
}

/// `μ_t(x_t) + σ_t·z`.
pub fn ddpm_step(
    x_t: &LatentVideo,
    eps_hat: &LatentVideo,
    t: usize,
    z: &LatentVideo,
    s: &NoiseSchedule,
) -> Result<LatentVideo> {
    x_t.ensure_same_shape(z)?;
    let mu = ddpm_mu(x_t, eps_hat, t, s)?;
    mu.lin_comb(1.0, z, s.sigma(t))
}

/// Deterministic (η = 0) DDIM update from level `t` to `t−1`.
pub fn ddim_step(
    x_t: &LatentVideo,
    eps_hat: &LatentVideo,
    t: usize,
    s: &NoiseSchedule,
) -> Result<LatentVideo> {
    s.check_step(t)?;
    let ab = s.alpha_bar(t);
    let ab_prev = s.alpha_bar_prev(t);
    let x0_pred = x_t.lin_comb(1.0 / ab.sqrt(), eps_hat, -(1.0 - ab).sqrt() / ab.sqrt())?;
    x0_pred.lin_comb(ab_prev.sqrt(), eps_hat, (1.0 - ab_prev).sqrt())
}

/// Inverse of [`ddim_step`]: recovers level `t` from level `t−1`.
pub fn ddim_invert_step(
    x_prev: &LatentVideo,
    eps_hat: &LatentVideo,
    t: usize,
    s: &NoiseSchedule,
) -> Result<LatentVideo> {
    s.check_step(t)?;
    let ab = s.alpha_bar(t);
    let ab_prev = s.alpha_bar_prev(t);
    let x0_pred = x_prev.lin_comb(
        1.0 / ab_prev.sqrt(),
        eps_hat,
        -(1.0 - ab_prev).sqrt() / ab_prev.sqrt(),
    )?;
    x0_pred.lin_comb(ab.sqrt(), eps_hat, (1.0 - ab).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::VideoShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape() -> VideoShape {
        VideoShape::new(2, 3, 4, 4)
    }

    #[test]
    fn linear_first_alpha_bar() {
        let s = build_schedule(100, 1e-4, 0.02, BetaSchedule::Linear).unwrap();
        assert_eq!(s.alpha_bars()[0], 1.0 - 1e-4);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn two_step_hand_schedule() {
        let s = NoiseSchedule::from_betas(vec![0.5, 0.5], vec![0.0, 1.0], "hand".into()).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5, 0.25]);
        assert_eq!(s.sigma(0), 0.0);
        // sqrt(0.5 * (1 - 0.5) / (1 - 0.25))
        assert!((s.sigma(1) - (1.0_f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cosine_endpoint_drops_by_two_orders() {
        // Independent evaluation of the squared-cosine curve.
        let f = |t: f64| {
            (((t / 100.0 + 0.008) / 1.008) * std::f64::consts::FRAC_PI_2)
                .cos()
                .powi(2)
        };
        let expected_last = (0..100)
            .map(|i| 1.0 - (1.0 - f(i as f64 + 1.0) / f(i as f64)).min(0.999))
            .product::<f64>();
        let s = build_schedule(100, 1e-4, 0.02, BetaSchedule::Cosine).unwrap();
        let last = s.alpha_bars()[99];
        assert!((last - expected_last).abs() <= 1e-12 * expected_last.abs().max(1e-300));
        assert!(last < s.alpha_bars()[0] / 100.0);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_schedule(1, 1e-4, 0.02, BetaSchedule::Linear).is_err());
        assert!(build_schedule(10, 0.0, 0.02, BetaSchedule::Linear).is_err());
        assert!(build_schedule(10, 0.03, 0.02, BetaSchedule::Linear).is_err());
        assert!(build_schedule(10, 1e-4, 1.0, BetaSchedule::Linear).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.1, 1.0], vec![0.0, 1.0], "x".into()).is_err());
    }

    #[test]
    fn cumulative_product_consistency() {
        for s in [
            NoiseSchedule::default_inference(),
            NoiseSchedule::default_training(),
            build_schedule(50, 1e-4, 0.02, BetaSchedule::Cosine).unwrap(),
        ] {
            let mut prod = 1.0;
            for (t, a) in s.alphas().iter().enumerate() {
                prod *= a;
                let rel = (s.alpha_bars()[t] - prod).abs() / prod;
                assert!(rel < 1e-6, "{} t={t} rel={rel}", s.id());
            }
        }
    }

    #[test]
    fn default_inference_schedule_shape() {
        let s = NoiseSchedule::default_inference();
        assert_eq!(s.num_steps(), 100);
        assert!(s.alpha_bars()[0] > 0.99);
        assert!(s.alpha_bars()[99] < 1e-3);
        assert_eq!(s.timestep(99).model_time, 990.0);
        // Respaced levels coincide with the training grid.
        let train = NoiseSchedule::default_training();
        for t in [0, 1, 50, 99] {
            let k = s.timestep(t).model_time as usize;
            let rel = (s.alpha_bar(t) - train.alpha_bar(k)).abs() / train.alpha_bar(k);
            assert!(rel < 1e-12);
        }
        assert!(s.posterior_sigmas()[1..].iter().all(|&x| x > 0.0));
    }

    #[test]
    fn forward_noise_cases() {
        let s = NoiseSchedule::default_inference();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = LatentVideo::randn(shape(), &mut rng);
        let zero = LatentVideo::zeros(shape());
        let out = forward_noise(&x0, 10, &zero, &s).unwrap();
        assert!(out.bit_eq(&x0.scale(s.alpha_bar(10).sqrt())));

        let out = noise_with_alpha_bar(&x0, &LatentVideo::randn(shape(), &mut rng), 1.0).unwrap();
        assert!(out.bit_eq(&x0));

        let ones = LatentVideo::filled(shape(), 1.0);
        let out = noise_with_alpha_bar(&zero, &ones, 0.25).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.75_f64.sqrt()));

        let bad = LatentVideo::zeros(VideoShape::new(1, 3, 4, 4));
        assert!(forward_noise(&x0, 0, &bad, &s).is_err());
        assert!(forward_noise(&x0, 100, &zero, &s).is_err());
    }

    #[test]
    fn mu_matches_posterior_mean_form() {
        // μ = c1·x0_pred + c2·x_t with x0_pred = (x_t − sqrt(1−ᾱ)ε)/sqrt(ᾱ).
        let s = NoiseSchedule::default_inference();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = LatentVideo::randn(shape(), &mut rng);
        let e = LatentVideo::randn(shape(), &mut rng);
        for t in [0, 1, 37, 99] {
            let ab = s.alpha_bar(t);
            let abp = s.alpha_bar_prev(t);
            let beta = s.betas()[t];
            let c1 = abp.sqrt() * beta / (1.0 - ab);
            let c2 = s.alphas()[t].sqrt() * (1.0 - abp) / (1.0 - ab);
            let mu = ddpm_mu(&x, &e, t, &s).unwrap();
            for ((m, xv), ev) in mu.as_slice().iter().zip(x.as_slice()).zip(e.as_slice()) {
                let x0p = (xv - (1.0 - ab).sqrt() * ev) / ab.sqrt();
                let want = c1 * x0p + c2 * xv;
                assert!((m - want).abs() < 1e-9, "t={t}");
            }
        }
    }

    #[test]
    fn mu_hand_fixture() {
        // betas [0.5, 0.5], t = 1, x_t = 1, ε̂ = 0: μ = x_t / sqrt(α_1) = sqrt(2).
        let s = NoiseSchedule::from_betas(vec![0.5, 0.5], vec![0.0, 1.0], "hand".into()).unwrap();
        let x = LatentVideo::filled(VideoShape::new(1, 1, 1, 1), 1.0);
        let e = LatentVideo::zeros(VideoShape::new(1, 1, 1, 1));
        let mu = ddpm_mu(&x, &e, 1, &s).unwrap();
        assert!((mu.as_slice()[0] - std::f64::consts::SQRT_2).abs() < 1e-15);
        let zero = ddpm_mu(&e, &e, 1, &s).unwrap();
        assert_eq!(zero.as_slice()[0], 0.0);
        assert!(ddpm_mu(&x, &e, 2, &s).is_err());
    }

    #[test]
    fn ddpm_step_cases() {
        let s = NoiseSchedule::default_inference();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = LatentVideo::randn(shape(), &mut rng);
        let e = LatentVideo::randn(shape(), &mut rng);
        let z = LatentVideo::randn(shape(), &mut rng);
        let zero = LatentVideo::zeros(shape());
        let mu = ddpm_mu(&x, &e, 20, &s).unwrap();
        assert!(ddpm_step(&x, &e, 20, &zero, &s).unwrap().bit_eq(&mu));

        let a = ddpm_step(&x, &e, 0, &z, &s).unwrap();
        let b = ddpm_step(&x, &e, 0, &zero, &s).unwrap();
        assert!(a.bit_eq(&b));

        let out = ddpm_step(&x, &e, 20, &z, &s).unwrap();
        let recovered = out.sub(&mu).unwrap().scale(1.0 / s.sigma(20));
        assert!(recovered.max_abs_diff(&z).unwrap() < 1e-6);
    }

    #[test]
    fn closed_loop_chain_reconstructs() {
        // Sample a forward trajectory, extract the per-step noise, replay it.
        let s = NoiseSchedule::default_inference();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x0 = LatentVideo::randn(shape(), &mut rng);
        let levels: Vec<LatentVideo> = (0..s.num_steps())
            .map(|t| forward_noise(&x0, t, &LatentVideo::randn(shape(), &mut rng), &s).unwrap())
            .collect();
        // "True" noise for each level, used as the prediction.
        let eps_for = |t: usize, x: &LatentVideo| {
            x.lin_comb(1.0, &x0, -s.alpha_bar(t).sqrt())
                .unwrap()
                .scale(1.0 / (1.0 - s.alpha_bar(t)).sqrt())
        };
        let mut maps = Vec::new();
        for t in 0..s.num_steps() {
            let target = if t == 0 { &x0 } else { &levels[t - 1] };
            let mu = ddpm_mu(&levels[t], &eps_for(t, &levels[t]), t, &s).unwrap();
            let r = target.sub(&mu).unwrap();
            maps.push(if t == 0 { r } else { r.scale(1.0 / s.sigma(t)) });
        }
        let mut x = levels[s.num_steps() - 1].clone();
        for t in s.denoising_order() {
            let eps = eps_for(t, &x);
            x = if t == 0 {
                ddpm_mu(&x, &eps, 0, &s)
                    .unwrap()
                    .lin_comb(1.0, &maps[0], 1.0)
                    .unwrap()
            } else {
                ddpm_step(&x, &eps, t, &maps[t], &s).unwrap()
            };
        }
        assert!(x.max_abs_diff(&x0).unwrap() < 1e-5);
    }

    #[test]
    fn ddim_noise_free_trajectory() {
        let s = NoiseSchedule::default_inference();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = LatentVideo::randn(shape(), &mut rng);
        let zero = LatentVideo::zeros(shape());
        let t = 30;
        let xt = x0.scale(s.alpha_bar(t).sqrt());
        let prev = ddim_step(&xt, &zero, t, &s).unwrap();
        let want = x0.scale(s.alpha_bar(t - 1).sqrt());
        assert!(prev.max_abs_diff(&want).unwrap() < 1e-12);
        assert!(ddim_step(&xt, &zero, 100, &s).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ddim_step_and_invert_are_inverses(seed in any::<u64>(), t in 0usize..100) {
                let s = NoiseSchedule::default_inference();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = LatentVideo::randn(shape(), &mut rng);
                let e = LatentVideo::randn(shape(), &mut rng);
                let back = ddim_invert_step(&ddim_step(&x, &e, t, &s).unwrap(), &e, t, &s).unwrap();
                prop_assert!(back.max_abs_diff(&x).unwrap() < 1e-5);
            }
        }
    }
}
