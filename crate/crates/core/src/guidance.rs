//! Negative-prompt guidance:
//!
//! ```text
//! ε̂ = ε_θ(x_t, ∅) + λ·(ε_θ(x_t, ∅) − ε_θ(x_t, c))
//! ```
//!
//! The first `t_skip` denoising steps follow the plain null-prompt path.

use ndarray::{Array1, Zip};
use serde::{Deserialize, Serialize};

use crate::attention_control::{capture_then_switch, AttentionControl};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::schedule::Timestep;
use crate::text::{TextCondition, TextSlot, TokenId, LIGHT, PAD, SCENE};
use crate::video::LatentVideo;

pub const DEFAULT_LAMBDA: f64 = 15.0;
pub const DEFAULT_LAMBDA_SWITCHED: f64 = 25.0;
pub const DEFAULT_T_SKIP: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSpec {
    pub lambda: f64,
    pub t_skip: usize,
    pub negative_condition: TextCondition,
    pub null_condition: TextCondition,
    pub steps: usize,
}

impl GuidanceSpec {
    pub fn new(
        lambda: f64,
        t_skip: usize,
        negative_condition: TextCondition,
        null_condition: TextCondition,
        steps: usize,
    ) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda {lambda} must be finite and ≥ 0"
            )));
        }
        if t_skip > steps {
            return Err(Error::InvalidArgument(format!(
                "t_skip {t_skip} exceeds {steps} steps"
            )));
        }
        if lambda > 0.0 && negative_condition == null_condition {
            log::warn!("negative condition equals the null condition: guidance is a no-op");
        }
        Ok(Self {
            lambda,
            t_skip,
            negative_condition,
            null_condition,
            steps,
        })
    }

    /// Whether step `t` (noise level index) lies in the initial
    /// reconstruction-only window. Denoising visits `t = steps−1` first.
    pub fn in_skip_window(&self, t: usize) -> bool {
        let position = self.steps.saturating_sub(1).saturating_sub(t);
        position < self.t_skip
    }
}

/// `ε_null + λ·(ε_null − ε_cond)`; exactly `ε_null` when `λ = 0`.
pub fn guided_eps(
    eps_null: &LatentVideo,
    eps_cond: &LatentVideo,
    lambda: f64,
) -> Result<LatentVideo> {
    eps_null.ensure_same_shape(eps_cond)?;
    if lambda == 0.0 {
        return Ok(eps_null.clone());
    }
    let mut out = eps_null.clone();
    Zip::from(out.array_mut())
        .and(eps_cond.array())
        .for_each(|n, &c| *n += lambda * (*n - c));
    Ok(out)
}

/// Null pass, then (outside the skip window and for `λ > 0`) the
/// negative-prompt pass, combined by [`guided_eps`]. With switching
/// enabled the null pass captures text features and the negative pass
/// consumes them.
pub fn dual_pass(
    model: &Denoiser,
    x_t: &LatentVideo,
    t: Timestep,
    spec: &GuidanceSpec,
    control: &mut AttentionControl,
) -> Result<LatentVideo> {
    if spec.in_skip_window(t.index) || spec.lambda == 0.0 {
        return model.predict_eps(x_t, t, &spec.null_condition, &mut AttentionControl::off());
    }
    let (eps_null, eps_cond) = if control.is_enabled() {
        capture_then_switch(
            model,
            x_t,
            t,
            &spec.null_condition,
            &spec.negative_condition,
            control,
        )?
    } else {
        (
            model.predict_eps(x_t, t, &spec.null_condition, control)?,
            model.predict_eps(x_t, t, &spec.negative_condition, control)?,
        )
    };
    guided_eps(&eps_null, &eps_cond, spec.lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// The bare concept token, e.g. "rain".
    Simple,
    /// Mean of the concept's contextual embeddings over a caption corpus,
    /// injected as a single pseudo-token.
    MeanEmbedding,
    /// The concept in its caption context, "scene light rain".
    Contextual,
    /// Invert with the simple prompt and reconstruct with the null prompt,
    /// without guidance.
    Implicit,
}

impl std::str::FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Self::Simple),
            "mean" | "mean_embedding" => Ok(Self::MeanEmbedding),
            "contextual" => Ok(Self::Contextual),
            "implicit" => Ok(Self::Implicit),
            other => Err(Error::InvalidArgument(format!(
                "unknown prompt mode {other:?}"
            ))),
        }
    }
}

/// Builds the negative condition for `concept`. `corpus` is only read in
/// mean-embedding mode. The implicit mode yields the simple prompt, which
/// is what that variant inverts with.
pub fn build_negative_condition(
    mode: PromptMode,
    concept: TokenId,
    model: &Denoiser,
    corpus: &[TextCondition],
) -> Result<TextCondition> {
    let text_len = model.config().text_len;
    model.token_embedding(concept)?;
    if concept == PAD {
        return Err(Error::UnknownToken("padding is not a concept".into()));
    }
    match mode {
        PromptMode::Simple | PromptMode::Implicit => {
            TextCondition::from_tokens(&[concept], text_len)
        }
        PromptMode::Contextual => TextCondition::from_tokens(&[SCENE, LIGHT, concept], text_len),
        PromptMode::MeanEmbedding => {
            let mut sum = Array1::<f64>::zeros(model.config().dim);
            let mut n = 0usize;
            for caption in corpus {
                for (i, slot) in caption.slots().iter().enumerate().take(text_len) {
                    if matches!(slot, TextSlot::Token(t) if *t == concept) {
                        sum += &model.token_embedding(concept)?;
                        sum += &model.text_position(i);
                        n += 1;
                    }
                }
            }
            if n == 0 {
                return Err(Error::InvalidArgument(
                    "no caption in the corpus contains the concept".into(),
                ));
            }
            let mean = sum / n as f64;
            let mut slots = vec![TextSlot::Token(PAD); text_len];
            slots[0] = TextSlot::Embedding(mean.to_vec());
            Ok(TextCondition::from_slots(slots))
        }
    }
}
