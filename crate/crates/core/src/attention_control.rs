//! Key/value switching for joint-attention blocks.
//!
//! In the conditional (negative prompt) pass, blocks in `B` compute their
//! text keys and values from the null pass's text features instead of their
//! own:
//!
//! ```text
//! h^{∅,c} = h_text^∅ | h_img^c
//! K = P_K(h^{∅,c}),  V = P_V(h^{∅,c}),  Q = P_Q(h^c)
//! ```
//!
//! Blocks in `B_initial` run twice: a standard application supplies the
//! next text features, the switched one supplies the next image features.
//! The null text features are captured per `(block, step)` during the null
//! pass.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, HiddenState};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::plot;
use crate::sampling::generate;
use crate::schedule::{NoiseSchedule, Timestep};
use crate::text::TextCondition;
use crate::video::{latent_to_pixels, LatentVideo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    Off,
    Capture,
    Switch,
}

/// How a block is evaluated under the current mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockRoute {
    Standard,
    Capture,
    Switch,
    Split,
}

#[derive(Debug, Clone)]
pub struct AttentionControl {
    mode: ControlMode,
    blocks: BTreeSet<usize>,
    initial_blocks: BTreeSet<usize>,
    buffer: HashMap<(usize, usize), Array2<f64>>,
    attention_evals: usize,
}

impl AttentionControl {
    /// No switching anywhere; forward passes are hook-free.
    pub fn off() -> Self {
        Self {
            mode: ControlMode::Off,
            blocks: BTreeSet::new(),
            initial_blocks: BTreeSet::new(),
            buffer: HashMap::new(),
            attention_evals: 0,
        }
    }

    pub fn new(blocks: BTreeSet<usize>, initial_blocks: BTreeSet<usize>) -> Result<Self> {
        if !initial_blocks.is_subset(&blocks) {
            return Err(Error::Control(format!(
                "initial blocks {initial_blocks:?} are not a subset of {blocks:?}"
            )));
        }
        Ok(Self {
            blocks,
            initial_blocks,
            ..Self::off()
        })
    }

    /// Default block sets for a model with `num_blocks` blocks: the first
    /// sixth and the last half, with the early ones split.
    pub fn default_for(num_blocks: usize) -> Self {
        let (b, bi) = default_blocks(num_blocks);
        Self::new(b, bi).expect("default initial set is a subset")
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: ControlMode) {
        self.mode = mode;
    }

    pub fn blocks(&self) -> &BTreeSet<usize> {
        &self.blocks
    }

    pub fn initial_blocks(&self) -> &BTreeSet<usize> {
        &self.initial_blocks
    }

    pub fn is_enabled(&self) -> bool {
        !self.blocks.is_empty()
    }

    pub fn route(&self, block: usize) -> BlockRoute {
        match self.mode {
            ControlMode::Off => BlockRoute::Standard,
            ControlMode::Capture if self.blocks.contains(&block) => BlockRoute::Capture,
            ControlMode::Switch if self.initial_blocks.contains(&block) => BlockRoute::Split,
            ControlMode::Switch if self.blocks.contains(&block) => BlockRoute::Switch,
            _ => BlockRoute::Standard,
        }
    }

    pub fn check_compatible(&self, num_blocks: usize) -> Result<()> {
        match self.blocks.iter().next_back() {
            Some(&b) if b >= num_blocks => Err(Error::Control(format!(
                "block {b} out of range for a {num_blocks}-block model"
            ))),
            _ => Ok(()),
        }
    }

    /// Stores the null pass's text features entering `block` at step `t`,
    /// replacing any earlier entry for the same key.
    pub fn capture_null_text(&mut self, block: usize, h_text: Array2<f64>, t: usize) -> Result<()> {
        if self.mode != ControlMode::Capture {
            return Err(Error::Control(format!(
                "capture called in {:?} mode",
                self.mode
            )));
        }
        self.buffer.insert((block, t), h_text);
        Ok(())
    }

    pub fn null_text(&self, block: usize, t: usize) -> Result<&Array2<f64>> {
        self.buffer
            .get(&(block, t))
            .ok_or(Error::MissingBuffer { block, t })
    }

    pub fn clear(&mut self) {
        self.buffer.clear();
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub(crate) fn count_attention(&mut self) {
        self.attention_evals += 1;
    }

    /// Attention evaluations performed since the last reset.
    pub fn attention_evals(&self) -> usize {
        self.attention_evals
    }

    pub fn reset_counter(&mut self) {
        self.attention_evals = 0;
    }
}

/// `B = [0, round(n/6)) ∪ [⌊n/2⌋, n)` and `B_initial = B ∩ [0, n/2)`, with
/// at least one early block.
pub fn default_blocks(num_blocks: usize) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let early = ((num_blocks as f64 / 6.0).round() as usize).max(1);
    let late = num_blocks / 2;
    let blocks: BTreeSet<usize> = (0..early).chain(late..num_blocks).collect();
    let initial = blocks.iter().copied().filter(|&b| b < late).collect();
    (blocks, initial)
}

/// Keys and values of block `block` for the cross-condition hidden state
/// `h_text^∅ | h_img^c`, with `h_img^c` taken from the conditional state `h`.
pub fn switched_kv(
    model: &Denoiser,
    block: usize,
    h: &HiddenState,
    t: Timestep,
    control: &AttentionControl,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if control.mode() != ControlMode::Switch {
        return Err(Error::Control(format!(
            "switched_kv in {:?} mode",
            control.mode()
        )));
    }
    if !control.blocks().contains(&block) {
        return Err(Error::Control(format!("block {block} is not switched")));
    }
    let nt = control.null_text(block, t.index)?;
    let temb = model.block_time(block, &model.time_features(t));
    Ok(model.kv_projections(block, nt.view(), h.img.view(), temb.view()))
}

/// Split evaluation of an initial block: text features from a standard
/// application on the conditional inputs, image features from the switched
/// application. Costs two attention evaluations.
pub fn split_block_forward(
    model: &Denoiser,
    block: usize,
    h: &HiddenState,
    null_text: &Array2<f64>,
    t: Timestep,
    control: &mut AttentionControl,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if !control.initial_blocks().contains(&block) {
        return Err(Error::Control(format!(
            "block {block} is not an initial block"
        )));
    }
    let tl = model.config().text_len;
    let temb = model.block_time(block, &model.time_features(t));
    let joint = h.concat();
    let standard = model.block_forward(block, joint.view(), temb.view(), None);
    control.count_attention();
    let switched = model.block_forward(block, joint.view(), temb.view(), Some(null_text.view()));
    control.count_attention();
    Ok((
        standard.slice(s![..tl, ..]).to_owned(),
        switched.slice(s![tl.., ..]).to_owned(),
    ))
}

/// Null pass in capture mode followed by the conditional pass in switch
/// mode. Buffers are cleared first so stale steps cannot leak in. Returns
/// `(ε_null, ε_cond)`; the control is left in off mode.
pub fn capture_then_switch(
    model: &Denoiser,
    x_t: &LatentVideo,
    t: Timestep,
    null: &TextCondition,
    cond: &TextCondition,
    control: &mut AttentionControl,
) -> Result<(LatentVideo, LatentVideo)> {
    control.clear();
    control.set_mode(ControlMode::Capture);
    let eps_null = model.predict_eps(x_t, t, null, control);
    let eps_null = match eps_null {
        Ok(e) => e,
        Err(e) => {
            control.set_mode(ControlMode::Off);
            return Err(e);
        }
    };
    control.set_mode(ControlMode::Switch);
    let eps_cond = model.predict_eps(x_t, t, cond, control);
    control.set_mode(ControlMode::Off);
    Ok((eps_null, eps_cond?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSelection {
    /// Mean PSNR (dB, pixel space) of each block's switched generation
    /// against the unswitched one. Higher means lower impact.
    pub impact_scores: Vec<f64>,
    pub threshold_db: f64,
    pub selected: BTreeSet<usize>,
}

impl BlockSelection {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("block_index,mean_psnr,selected\n");
        for (b, p) in self.impact_scores.iter().enumerate() {
            let _ = writeln!(out, "{b},{p},{}", self.selected.contains(&b) as u8);
        }
        out
    }

    pub fn to_svg(&self) -> String {
        // Infinite scores are drawn at the top of the finite range.
        let finite_max = self
            .impact_scores
            .iter()
            .copied()
            .filter(|p| p.is_finite())
            .fold(self.threshold_db, f64::max);
        let cap = finite_max + 10.0;
        let values: Vec<f64> = self.impact_scores.iter().map(|p| p.min(cap)).collect();
        plot::bar_chart(
            "Block impact: PSNR of switched vs unswitched generation",
            "block",
            "PSNR (dB)",
            &values,
            Some(self.threshold_db),
        )
    }
}

/// For each block `b`, generates with switching at `B = {b}` (no split) and
/// compares against the unswitched conditional generation of the same seed.
/// Blocks whose mean PSNR reaches `threshold_db` are selected.
pub fn block_impact_study(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    prompts: &[TextCondition],
    seeds: &[u64],
    threshold_db: f64,
) -> Result<BlockSelection> {
    if prompts.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one prompt and one seed".into(),
        ));
    }
    let n = model.config().num_blocks;
    let mut sums = vec![0.0; n];
    for prompt in prompts {
        for &seed in seeds {
            let reference = latent_to_pixels(&generate(
                model,
                schedule,
                prompt,
                seed,
                &mut AttentionControl::off(),
            )?);
            for (b, sum) in sums.iter_mut().enumerate() {
                let mut control = AttentionControl::new(BTreeSet::from([b]), BTreeSet::new())?;
                let out = latent_to_pixels(&generate(model, schedule, prompt, seed, &mut control)?);
                *sum += psnr(&out, &reference, 1.0)?;
            }
        }
    }
    let count = (prompts.len() * seeds.len()) as f64;
    let impact_scores: Vec<f64> = sums.into_iter().map(|s| s / count).collect();
    let selected = impact_scores
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold_db)
        .map(|(b, _)| b)
        .collect();
    Ok(BlockSelection {
        impact_scores,
        threshold_db,
        selected,
    })
}
