//! End-to-end deraining: invert the rainy video, then replay the recorded
//! noise with negative-prompt guidance away from the rain concept.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::attention_control::AttentionControl;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::guidance::{build_negative_condition, GuidanceSpec, PromptMode};
use crate::inversion::{ddpm_invert, reconstruct, InversionRecord};
use crate::schedule::NoiseSchedule;
use crate::text::{TextCondition, TokenId};
use crate::video::{latent_to_pixels, pixels_to_latent, LatentVideo};

/// Condition used for the inversion pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvertWith {
    Null,
    Concept,
}

impl std::str::FromStr for InvertWith {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "null" => Ok(Self::Null),
            "concept" => Ok(Self::Concept),
            other => Err(Error::InvalidArgument(format!(
                "unknown inversion condition {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DerainOptions {
    pub lambda: f64,
    pub t_skip: usize,
    pub prompt_mode: PromptMode,
    pub concept: TokenId,
    pub invert_with: InvertWith,
    /// `None` disables switching.
    pub blocks: Option<(BTreeSet<usize>, BTreeSet<usize>)>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct DerainOutput {
    pub record: InversionRecord,
    pub negative_condition: TextCondition,
    /// Final latent before clamping.
    pub latent: LatentVideo,
    pub pixels: LatentVideo,
}

/// Derains a `[0, 1]` pixel video. `corpus` feeds the mean-embedding
/// prompt and is ignored otherwise.
///
/// In implicit mode the video is inverted with the concept prompt and
/// replayed with the null prompt, no guidance.
pub fn derain(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    rainy: &LatentVideo,
    opts: &DerainOptions,
    corpus: &[TextCondition],
) -> Result<DerainOutput> {
    let text_len = model.config().text_len;
    let null = TextCondition::null(text_len);
    let negative = build_negative_condition(opts.prompt_mode, opts.concept, model, corpus)?;
    let x0 = pixels_to_latent(rainy);
    let implicit = opts.prompt_mode == PromptMode::Implicit;
    let invert_cond = if implicit || opts.invert_with == InvertWith::Concept {
        &negative
    } else {
        &null
    };
    let mut control = match &opts.blocks {
        Some((b, bi)) => AttentionControl::new(b.clone(), bi.clone())?,
        None => AttentionControl::off(),
    };
    control.check_compatible(model.config().num_blocks)?;

    let record = ddpm_invert(&x0, invert_cond, model, schedule, opts.seed)?;
    let latent = if implicit {
        reconstruct(
            &record,
            &null,
            model,
            schedule,
            None,
            &mut AttentionControl::off(),
        )?
    } else {
        let spec = GuidanceSpec::new(
            opts.lambda,
            opts.t_skip,
            negative.clone(),
            null.clone(),
            schedule.num_steps(),
        )?;
        reconstruct(&record, &null, model, schedule, Some(&spec), &mut control)?
    };
    if !latent.is_finite() {
        return Err(Error::NonFinite("derained latent".into()));
    }
    let pixels = latent_to_pixels(&latent);
    Ok(DerainOutput {
        record,
        negative_condition: negative,
        latent,
        pixels,
    })
}

/// Pure reconstruction of the inverted video with the null prompt.
pub fn reconstruct_null(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    record: &InversionRecord,
) -> Result<LatentVideo> {
    let null = TextCondition::null(model.config().text_len);
    reconstruct(
        record,
        &null,
        model,
        schedule,
        None,
        &mut AttentionControl::off(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::schedule::{build_schedule, BetaSchedule};
    use crate::text::RAIN;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Denoiser, NoiseSchedule, LatentVideo) {
        let mut m = Denoiser::new(DenoiserConfig::micro(), 5).unwrap();
        let s = build_schedule(12, 1e-3, 0.2, BetaSchedule::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        m.params_mut()
            .outer
            .out_w
            .mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let v =
            latent_to_pixels(&LatentVideo::randn(m.config().video_shape(), &mut rng).scale(0.3));
        (m, s, v)
    }

    fn opts(lambda: f64) -> DerainOptions {
        DerainOptions {
            lambda,
            t_skip: 4,
            prompt_mode: PromptMode::Contextual,
            concept: RAIN,
            invert_with: InvertWith::Null,
            blocks: None,
            seed: 9,
        }
    }

    #[test]
    fn zero_lambda_is_pure_reconstruction() {
        let (m, s, v) = setup();
        let out = derain(&m, &s, &v, &opts(0.0), &[]).unwrap();
        let pure = reconstruct_null(&m, &s, &out.record).unwrap();
        assert!(out.latent.bit_eq(&pure));
        assert!(out.latent.max_abs_diff(&pixels_to_latent(&v)).unwrap() < 1e-9);
    }

    #[test]
    fn guidance_moves_the_output() {
        let (m, s, v) = setup();
        let a = derain(&m, &s, &v, &opts(0.0), &[]).unwrap();
        let b = derain(&m, &s, &v, &opts(15.0), &[]).unwrap();
        let d = a.latent.max_abs_diff(&b.latent).unwrap();
        assert!(d > 1e-6, "{d}");
    }

    #[test]
    fn earlier_guidance_moves_further() {
        let (m, s, v) = setup();
        let mut o = opts(15.0);
        o.t_skip = s.num_steps();
        let full = derain(&m, &s, &v, &o, &[]).unwrap();
        let pure = reconstruct_null(&m, &s, &full.record).unwrap();
        assert!(full.latent.bit_eq(&pure));
        let mut last = 0.0;
        for t_skip in [8, 4, 0] {
            o.t_skip = t_skip;
            let d = derain(&m, &s, &v, &o, &[])
                .unwrap()
                .latent
                .l2_distance(&pure)
                .unwrap();
            assert!(d >= last, "t_skip {t_skip}: {d} < {last}");
            last = d;
        }
    }

    #[test]
    fn out_of_range_blocks_rejected() {
        let (m, s, v) = setup();
        let mut o = opts(15.0);
        o.blocks = Some(([5].into(), BTreeSet::new()));
        assert!(matches!(
            derain(&m, &s, &v, &o, &[]),
            Err(Error::Control(_))
        ));
    }
}
