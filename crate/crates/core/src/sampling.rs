//! Ancestral generation from pure noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention_control::{capture_then_switch, AttentionControl};
use crate::denoiser::Denoiser;
use crate::error::Result;
use crate::schedule::{ddpm_step, NoiseSchedule};
use crate::text::TextCondition;
use crate::video::LatentVideo;

/// Samples a latent video conditioned on `cond`. When `control` has a block
/// set, each step runs the null pass in capture mode and the conditional
/// pass with switched keys and values. The noise sequence depends only on
/// `seed`, so runs that differ only in switching share their noise.
pub fn generate(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    cond: &TextCondition,
    seed: u64,
    control: &mut AttentionControl,
) -> Result<LatentVideo> {
    let shape = model.config().video_shape();
    let null = TextCondition::null(model.config().text_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = LatentVideo::randn(shape, &mut rng);
    for t in schedule.denoising_order() {
        let ts = schedule.timestep(t);
        let eps = if control.is_enabled() {
            capture_then_switch(model, &x, ts, &null, cond, control)?.1
        } else {
            model.predict_eps(&x, ts, cond, control)?
        };
        let z = LatentVideo::randn(shape, &mut rng);
        x = ddpm_step(&x, &eps, t, &z, schedule)?;
    }
    Ok(x)
}
