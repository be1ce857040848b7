//! SDEdit, DDIM and edit-friendly DDPM inversion, and reconstruction from
//! recorded noise maps.
//!
//! DDPM inversion draws an independent noisy latent per level,
//! `x_t = sqrt(ᾱ_t)·x0 + sqrt(1−ᾱ_t)·ε̃_t`, then extracts the noise each
//! sampling step would need, `z_t = (x_{t−1} − μ_t(x_t, c)) / σ_t`.
//! At `t = 0` the posterior deviation is zero, so the stored map is the
//! residual `x0 − μ_0(x_0, c)` and is added unscaled. Replaying the maps
//! with the same condition returns the source up to rounding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention_control::AttentionControl;
use crate::container::TensorContainer;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::guidance::{dual_pass, GuidanceSpec};
use crate::schedule::{
    ddim_invert_step, ddim_step, ddpm_mu, ddpm_step, forward_noise, NoiseSchedule,
};
use crate::text::TextCondition;
use crate::video::LatentVideo;

const RECORD_ENTRY: &str = "__record_json__";

#[derive(Debug, Clone, PartialEq)]
pub struct InversionRecord {
    /// Latent at the noisiest level `T−1`.
    pub x_t: LatentVideo,
    /// `noise_maps[t]` is the map consumed by the step from level `t`.
    pub noise_maps: Vec<LatentVideo>,
    pub condition_used: TextCondition,
    pub schedule_id: String,
    /// Noisy latents per level, kept so reconstruction can start midway.
    pub latents: Option<Vec<LatentVideo>>,
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    condition_used: TextCondition,
    schedule_id: String,
    steps: usize,
    has_latents: bool,
}

impl InversionRecord {
    pub fn steps(&self) -> usize {
        self.noise_maps.len()
    }

    fn check(&self, s: &NoiseSchedule) -> Result<()> {
        if self.schedule_id != s.id() {
            return Err(Error::RecordMismatch(format!(
                "record schedule {:?}, given {:?}",
                self.schedule_id,
                s.id()
            )));
        }
        if self.noise_maps.len() != s.num_steps() {
            return Err(Error::RecordMismatch(format!(
                "{} noise maps for a {}-step schedule",
                self.noise_maps.len(),
                s.num_steps()
            )));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        c.insert_json(
            RECORD_ENTRY,
            &RecordHeader {
                condition_used: self.condition_used.clone(),
                schedule_id: self.schedule_id.clone(),
                steps: self.steps(),
                has_latents: self.latents.is_some(),
            },
        )?;
        c.insert_video("x_T", &self.x_t)?;
        for (t, z) in self.noise_maps.iter().enumerate() {
            c.insert_video(&format!("noise_map.{t}"), z)?;
        }
        if let Some(xs) = &self.latents {
            for (t, x) in xs.iter().enumerate() {
                c.insert_video(&format!("latent.{t}"), x)?;
            }
        }
        Ok(c)
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        let h: RecordHeader = c.get_json(RECORD_ENTRY)?;
        let noise_maps = (0..h.steps)
            .map(|t| c.get_video(&format!("noise_map.{t}")))
            .collect::<Result<Vec<_>>>()?;
        let latents = if h.has_latents {
            Some(
                (0..h.steps)
                    .map(|t| c.get_video(&format!("latent.{t}")))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Self {
            x_t: c.get_video("x_T")?,
            noise_maps,
            condition_used: h.condition_used,
            schedule_id: h.schedule_id,
            latents,
        })
    }
}

fn check_video(x0: &LatentVideo) -> Result<()> {
    if x0.shape().is_empty() {
        return Err(Error::InvalidArgument("empty video".into()));
    }
    Ok(())
}

/// Noises `x0` straight to level `t_start` with fresh Gaussian noise.
pub fn sdedit_invert(
    x0: &LatentVideo,
    t_start: usize,
    s: &NoiseSchedule,
    seed: u64,
) -> Result<LatentVideo> {
    check_video(x0)?;
    s.check_step(t_start)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = LatentVideo::randn(x0.shape(), &mut rng);
    forward_noise(x0, t_start, &eps, s)
}

/// Ancestral sampling from level `start` with fresh seeded noise.
pub fn sdedit_reconstruct(
    x_start: &LatentVideo,
    start: usize,
    cond: &TextCondition,
    model: &Denoiser,
    s: &NoiseSchedule,
    seed: u64,
) -> Result<LatentVideo> {
    s.check_step(start)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x_start.clone();
    for t in (0..=start).rev() {
        let eps = model.predict_eps(&x, s.timestep(t), cond, &mut AttentionControl::off())?;
        let z = LatentVideo::randn(x.shape(), &mut rng);
        x = ddpm_step(&x, &eps, t, &z, s)?;
    }
    Ok(x)
}

/// Deterministic DDIM inversion up to level `end`. The noise estimate for
/// the step into level `t` is computed from `x_{t−1}`. Returns the latents
/// of levels `0..=end`.
pub fn ddim_invert(
    x0: &LatentVideo,
    cond: &TextCondition,
    model: &Denoiser,
    s: &NoiseSchedule,
    end: usize,
) -> Result<Vec<LatentVideo>> {
    check_video(x0)?;
    s.check_step(end)?;
    let mut traj = Vec::with_capacity(end + 1);
    let mut prev = x0.clone();
    for t in 0..=end {
        let eps = model.predict_eps(&prev, s.timestep(t), cond, &mut AttentionControl::off())?;
        let next = ddim_invert_step(&prev, &eps, t, s)?;
        traj.push(next.clone());
        prev = next;
    }
    Ok(traj)
}

/// Deterministic DDIM sampling from level `start` to the clean level.
pub fn ddim_reconstruct(
    x_start: &LatentVideo,
    start: usize,
    cond: &TextCondition,
    model: &Denoiser,
    s: &NoiseSchedule,
) -> Result<LatentVideo> {
    s.check_step(start)?;
    let mut x = x_start.clone();
    for t in (0..=start).rev() {
        let eps = model.predict_eps(&x, s.timestep(t), cond, &mut AttentionControl::off())?;
        x = ddim_step(&x, &eps, t, s)?;
    }
    Ok(x)
}

/// Edit-friendly DDPM inversion with independent per-level noise.
pub fn ddpm_invert(
    x0: &LatentVideo,
    cond: &TextCondition,
    model: &Denoiser,
    s: &NoiseSchedule,
    seed: u64,
) -> Result<InversionRecord> {
    check_video(x0)?;
    let n = s.num_steps();
    if let Some(t) = (1..n).find(|&t| s.sigma(t) <= 0.0) {
        return Err(Error::Schedule(format!(
            "zero posterior deviation at non-final step {t}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latents = (0..n)
        .map(|t| {
            let eps = LatentVideo::randn(x0.shape(), &mut rng);
            forward_noise(x0, t, &eps, s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut noise_maps = Vec::with_capacity(n);
    for t in 0..n {
        let prev = if t == 0 { x0 } else { &latents[t - 1] };
        let eps = model.predict_eps(
            &latents[t],
            s.timestep(t),
            cond,
            &mut AttentionControl::off(),
        )?;
        let mu = ddpm_mu(&latents[t], &eps, t, s)?;
        let sigma = s.sigma(t);
        let z = if sigma > 0.0 {
            prev.lin_comb(1.0 / sigma, &mu, -1.0 / sigma)?
        } else {
            prev.sub(&mu)?
        };
        noise_maps.push(z);
    }
    Ok(InversionRecord {
        x_t: latents[n - 1].clone(),
        noise_maps,
        condition_used: cond.clone(),
        schedule_id: s.id().to_string(),
        latents: Some(latents),
    })
}

/// One sampling step consuming a recorded map.
fn replay_step(
    x: &LatentVideo,
    eps: &LatentVideo,
    t: usize,
    z: &LatentVideo,
    s: &NoiseSchedule,
) -> Result<LatentVideo> {
    if s.sigma(t) > 0.0 {
        ddpm_step(x, eps, t, z, s)
    } else {
        ddpm_mu(x, eps, t, s)?.lin_comb(1.0, z, 1.0)
    }
}

/// Replays `record` from level `T−1`. Without guidance each step uses
/// `ε_θ(x_t, cond)` through `control`; with guidance it uses
/// [`dual_pass`] with the spec's null and negative conditions.
pub fn reconstruct(
    record: &InversionRecord,
    cond: &TextCondition,
    model: &Denoiser,
    s: &NoiseSchedule,
    guidance: Option<&GuidanceSpec>,
    control: &mut AttentionControl,
) -> Result<LatentVideo> {
    record.check(s)?;
    reconstruct_from(record, s.num_steps() - 1, cond, model, s, guidance, control)
}

/// Replays `record` from level `start`, using its retained latent there.
pub fn reconstruct_from(
    record: &InversionRecord,
    start: usize,
    cond: &TextCondition,
    model: &Denoiser,
    s: &NoiseSchedule,
    guidance: Option<&GuidanceSpec>,
    control: &mut AttentionControl,
) -> Result<LatentVideo> {
    record.check(s)?;
    s.check_step(start)?;
    if let Some(g) = guidance {
        if g.steps != s.num_steps() {
            return Err(Error::RecordMismatch(format!(
                "guidance for {} steps, schedule has {}",
                g.steps,
                s.num_steps()
            )));
        }
    }
    let mut x =
        if start == s.num_steps() - 1 {
            record.x_t.clone()
        } else {
            record.latents.as_ref().ok_or_else(|| {
                Error::RecordMismatch("record keeps no intermediate latents".into())
            })?[start]
                .clone()
        };
    for t in (0..=start).rev() {
        let ts = s.timestep(t);
        let eps = match guidance {
            Some(g) => dual_pass(model, &x, ts, g, control)?,
            None => model.predict_eps(&x, ts, cond, control)?,
        };
        x = replay_step(&x, &eps, t, &record.noise_maps[t], s)?;
    }
    Ok(x)
}
