//! Run configuration shared by every subcommand.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention_control::default_blocks;
use crate::denoiser::{DenoiserConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::guidance::{PromptMode, DEFAULT_LAMBDA, DEFAULT_LAMBDA_SWITCHED, DEFAULT_T_SKIP};
use crate::pipeline::{DerainOptions, InvertWith};
use crate::schedule::{
    build_schedule, BetaSchedule, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START,
    DEFAULT_STEPS, TRAIN_STEPS,
};
use crate::text::{token_for, TextCondition, TokenId, PAD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub train_steps: usize,
    /// Inference steps, respaced from the training grid.
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: BetaSchedule,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            train_steps: TRAIN_STEPS,
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            kind: BetaSchedule::Linear,
        }
    }
}

impl ScheduleConfig {
    pub fn inference(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::respaced(
            self.train_steps,
            self.steps,
            self.beta_start,
            self.beta_end,
            self.kind,
        )
    }

    pub fn training(&self) -> Result<NoiseSchedule> {
        build_schedule(self.train_steps, self.beta_start, self.beta_end, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_videos: usize,
    pub train_seed: u64,
    pub eval_videos: usize,
    pub eval_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_videos: 5000,
            train_seed: 7,
            eval_videos: 10,
            eval_seed: 1234,
        }
    }
}

/// Knobs of the study subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub block_threshold_db: f64,
    pub block_seeds: Vec<u64>,
    pub block_prompts: Vec<String>,
    pub sweep_videos: usize,
    pub sweep_t_skips: Vec<usize>,
    pub probe_seeds: Vec<u64>,
    pub probe_prompts: Vec<String>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            block_threshold_db: 20.0,
            block_seeds: vec![0, 1],
            block_prompts: vec!["scene light rain".into(), "scene heavy rain".into()],
            sweep_videos: 5,
            sweep_t_skips: vec![0, 25, 50],
            probe_seeds: (0..8).collect(),
            probe_prompts: vec![
                "".into(),
                "scene".into(),
                "scene rain".into(),
                "rain".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub checkpoint: PathBuf,
    pub model: DenoiserConfig,
    pub schedule: ScheduleConfig,
    /// `None` picks 15, or 25 when switching is on.
    pub lambda: Option<f64>,
    pub t_skip: usize,
    pub prompt_mode: PromptMode,
    pub concept: String,
    pub attn_switch: bool,
    /// `None` uses the default sets for the model depth.
    pub blocks: Option<Vec<usize>>,
    pub blocks_initial: Option<Vec<usize>>,
    pub invert_with: InvertWith,
    pub seed: u64,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
    /// Scene or video container to process.
    pub input: Option<PathBuf>,
    /// Derained video container, for `evaluate`.
    pub derained: Option<PathBuf>,
    /// Output root; each subcommand writes to a directory named after it.
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("checkpoints/toy.vdt"),
            model: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            lambda: None,
            t_skip: DEFAULT_T_SKIP,
            prompt_mode: PromptMode::Contextual,
            concept: "rain".into(),
            attn_switch: true,
            blocks: None,
            blocks_initial: None,
            invert_with: InvertWith::Null,
            seed: 0,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            analysis: AnalysisConfig::default(),
            input: None,
            derained: None,
            output: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn effective_lambda(&self) -> f64 {
        match self.lambda {
            Some(l) => l,
            None if self.attn_switch => DEFAULT_LAMBDA_SWITCHED,
            None => DEFAULT_LAMBDA,
        }
    }

    pub fn concept_token(&self) -> Result<TokenId> {
        let t = token_for(&self.concept)?;
        if t == PAD {
            return Err(Error::Config(
                "the concept cannot be the padding token".into(),
            ));
        }
        Ok(t)
    }

    /// Switched and split block sets, or `None` when switching is off.
    pub fn block_sets(&self) -> Option<(BTreeSet<usize>, BTreeSet<usize>)> {
        if !self.attn_switch {
            return None;
        }
        let (db, dbi) = default_blocks(self.model.num_blocks);
        let b = self
            .blocks
            .as_ref()
            .map_or(db, |v| v.iter().copied().collect());
        let bi = match &self.blocks_initial {
            Some(v) => v.iter().copied().collect(),
            None if self.blocks.is_some() => b
                .iter()
                .copied()
                .filter(|&x| x < self.model.num_blocks / 2)
                .collect(),
            None => dbi,
        };
        Some((b, bi))
    }

    pub fn derain_options(&self) -> Result<DerainOptions> {
        Ok(DerainOptions {
            lambda: self.effective_lambda(),
            t_skip: self.t_skip,
            prompt_mode: self.prompt_mode,
            concept: self.concept_token()?,
            invert_with: self.invert_with,
            blocks: self.block_sets(),
            seed: self.seed,
        })
    }

    /// Checks everything that can be checked without loading tensors.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let s = self.schedule.inference()?;
        self.schedule.training()?;
        if self.t_skip > s.num_steps() {
            return Err(Error::Config(format!(
                "t_skip {} exceeds {} inference steps",
                self.t_skip,
                s.num_steps()
            )));
        }
        let l = self.effective_lambda();
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::Config(format!("lambda {l} must be finite and ≥ 0")));
        }
        self.concept_token()?;
        if self.data.train_videos == 0 || self.data.eval_videos == 0 {
            return Err(Error::Config("video counts must be positive".into()));
        }
        let a = &self.analysis;
        if a.block_seeds.is_empty() || a.block_prompts.is_empty() || a.probe_seeds.is_empty() {
            return Err(Error::Config(
                "study seed and prompt lists must be non-empty".into(),
            ));
        }
        if a.sweep_videos == 0 || a.sweep_videos > self.data.eval_videos {
            return Err(Error::Config(format!(
                "sweep_videos {} must be in 1..={}",
                a.sweep_videos, self.data.eval_videos
            )));
        }
        if let Some(&t) = a.sweep_t_skips.iter().find(|&&t| t >= s.num_steps()) {
            return Err(Error::Config(format!(
                "sweep t_skip {t} must be below {}",
                s.num_steps()
            )));
        }
        for p in a.block_prompts.iter().chain(&a.probe_prompts) {
            TextCondition::parse(p, self.model.text_len)?;
        }
        if let Some((b, bi)) = self.block_sets() {
            if let Some(&x) = b.iter().find(|&&x| x >= self.model.num_blocks) {
                return Err(Error::Config(format!(
                    "block {x} out of range for {} blocks",
                    self.model.num_blocks
                )));
            }
            if !bi.is_subset(&b) {
                return Err(Error::Config(format!(
                    "initial blocks {bi:?} are not a subset of {b:?}"
                )));
            }
        } else if self.blocks.is_some() || self.blocks_initial.is_some() {
            log::warn!("block sets given but switching is off; they are ignored");
        }
        Ok(())
    }
}
