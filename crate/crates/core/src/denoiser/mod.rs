//! Toy joint-attention diffusion transformer.
//!
//! Text tokens and video patch tokens are concatenated (text first) and every
//! block attends over the joint sequence. Each block is pre-norm:
//!
//! ```text
//! x = h + W_t·sin(τ) + b_t          per-block timestep conditioning
//! y = x + Attn(LN1(x))·W_o + b_o    joint multi-head attention
//! h' = y + GELU(LN2(y)·W_1 + b_1)·W_2 + b_2
//! ```
//!
//! Attention control hooks sit at the Q/K/V boundary of each block: see
//! [`crate::attention_control`].

mod grad;
mod layers;
mod params;
mod train;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention_control::{AttentionControl, BlockRoute};
use crate::container::TensorContainer;
use crate::error::{check_shape, Error, Result};
use crate::schedule::Timestep;
use crate::text::{TextCondition, TextSlot, VOCAB_SIZE};
use crate::video::{LatentVideo, VideoShape};

pub use grad::{finite_difference_check, GradCheckReport};
pub use params::{BlockParams, OuterParams, ParamView, Params};
pub use train::{train_toy, TrainConfig, TrainExample, TrainReport};

pub(crate) use layers::{layer_norm, linear, multi_head_attention};

pub const CONFIG_ENTRY: &str = "__config_json__";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub num_blocks: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub text_len: usize,
    pub vocab_size: usize,
    pub patch_size: usize,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            num_blocks: 8,
            dim: 64,
            heads: 4,
            ffn_dim: 128,
            text_len: 4,
            vocab_size: VOCAB_SIZE,
            patch_size: 4,
            frames: 4,
            channels: 3,
            height: 16,
            width: 16,
        }
    }
}

impl DenoiserConfig {
    /// Two-block, dim-8 model used for gradient checks and hand oracles.
    pub fn micro() -> Self {
        Self {
            num_blocks: 2,
            dim: 8,
            heads: 2,
            ffn_dim: 16,
            text_len: 4,
            vocab_size: VOCAB_SIZE,
            patch_size: 2,
            frames: 2,
            channels: 1,
            height: 4,
            width: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_blocks == 0 || self.num_blocks > 30 {
            return fail(format!("num_blocks {} outside 1..=30", self.num_blocks));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return fail(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            ));
        }
        if self.dim % 2 != 0 {
            return fail(format!("dim {} must be even", self.dim));
        }
        if self.patch_size == 0
            || self.height % self.patch_size != 0
            || self.width % self.patch_size != 0
        {
            return fail(format!(
                "{}x{} frames do not tile into {}-pixel patches",
                self.height, self.width, self.patch_size
            ));
        }
        if self.frames == 0 || self.channels == 0 || self.text_len == 0 || self.ffn_dim == 0 {
            return fail("degenerate dimensions".into());
        }
        if self.vocab_size < VOCAB_SIZE {
            return fail(format!("vocab_size {} below {VOCAB_SIZE}", self.vocab_size));
        }
        if self.dim < self.patch_dim() {
            // The patch embedding then cannot carry thin streaks at all.
            log::warn!(
                "dim {} is below the patch dimension {}",
                self.dim,
                self.patch_dim()
            );
        }
        Ok(())
    }

    pub fn video_shape(&self) -> VideoShape {
        VideoShape::new(self.frames, self.channels, self.height, self.width)
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn img_tokens(&self) -> usize {
        self.frames * (self.height / self.patch_size) * (self.width / self.patch_size)
    }

    pub fn tokens(&self) -> usize {
        self.text_len + self.img_tokens()
    }
}

/// Hidden features `h = h_text | h_img`, text first.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub text: Array2<f64>,
    pub img: Array2<f64>,
}

impl HiddenState {
    pub fn concat(&self) -> Array2<f64> {
        concatenate(Axis(0), &[self.text.view(), self.img.view()]).expect("same feature width")
    }

    pub fn split(joint: ArrayView2<f64>, text_len: usize) -> Self {
        Self {
            text: joint.slice(s![..text_len, ..]).to_owned(),
            img: joint.slice(s![text_len.., ..]).to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: Params,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(&config, &mut rng);
        Ok(Self { config, params })
    }

    pub fn from_params(config: DenoiserConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let template = Params::init(&config, &mut ChaCha8Rng::seed_from_u64(0));
        for (a, b) in template.views().iter().zip(params.views()) {
            if a.name != b.name || a.dims != b.dims {
                return Err(Error::Config(format!(
                    "parameter {} has dims {:?}, expected {:?}",
                    b.name, b.dims, a.dims
                )));
            }
        }
        if template.views().len() != params.views().len() {
            return Err(Error::Config(
                "parameter count does not match config".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn token_embedding(&self, token: crate::text::TokenId) -> Result<ArrayView1<'_, f64>> {
        let i = token.0 as usize;
        if i >= self.config.vocab_size {
            return Err(Error::UnknownToken(format!("#{i}")));
        }
        Ok(self.params.outer.token_emb.row(i))
    }

    pub fn text_position(&self, slot: usize) -> ArrayView1<'_, f64> {
        self.params.outer.text_pos.row(slot)
    }

    pub(crate) fn embed_text(&self, cond: &TextCondition) -> Result<Array2<f64>> {
        let cfg = &self.config;
        if cond.len() != cfg.text_len {
            return Err(Error::Shape {
                expected: vec![cfg.text_len],
                got: vec![cond.len()],
            });
        }
        let mut text = Array2::zeros((cfg.text_len, cfg.dim));
        for (i, slot) in cond.slots().iter().enumerate() {
            match slot {
                TextSlot::Token(t) => {
                    let row = &self.token_embedding(*t)? + &self.text_position(i);
                    text.row_mut(i).assign(&row);
                }
                TextSlot::Embedding(v) => {
                    if v.len() != cfg.dim {
                        return Err(Error::Shape {
                            expected: vec![cfg.dim],
                            got: vec![v.len()],
                        });
                    }
                    text.row_mut(i).assign(&ArrayView1::from(v.as_slice()));
                }
            }
        }
        Ok(text)
    }

    pub(crate) fn patchify(&self, video: &LatentVideo) -> Result<Array2<f64>> {
        let cfg = &self.config;
        check_shape(&cfg.video_shape().dims(), &video.shape().dims())?;
        let p = cfg.patch_size;
        let (gh, gw) = (cfg.height / p, cfg.width / p);
        let a = video.array();
        let mut out = Array2::zeros((cfg.img_tokens(), cfg.patch_dim()));
        for f in 0..cfg.frames {
            for gy in 0..gh {
                for gx in 0..gw {
                    let tok = (f * gh + gy) * gw + gx;
                    let mut k = 0;
                    for c in 0..cfg.channels {
                        for dy in 0..p {
                            for dx in 0..p {
                                out[[tok, k]] = a[[f, c, gy * p + dy, gx * p + dx]];
                                k += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn unpatchify(&self, tokens: ArrayView2<f64>) -> LatentVideo {
        let cfg = &self.config;
        let p = cfg.patch_size;
        let (gh, gw) = (cfg.height / p, cfg.width / p);
        let mut video = LatentVideo::zeros(cfg.video_shape());
        let a = video.array_mut();
        for f in 0..cfg.frames {
            for gy in 0..gh {
                for gx in 0..gw {
                    let tok = (f * gh + gy) * gw + gx;
                    let mut k = 0;
                    for c in 0..cfg.channels {
                        for dy in 0..p {
                            for dx in 0..p {
                                a[[f, c, gy * p + dy, gx * p + dx]] = tokens[[tok, k]];
                                k += 1;
                            }
                        }
                    }
                }
            }
        }
        video
    }

    /// Token embeddings plus patch projection. The timestep enters per block.
    pub fn embed(
        &self,
        cond: &TextCondition,
        video: &LatentVideo,
        _t: Timestep,
    ) -> Result<HiddenState> {
        let text = self.embed_text(cond)?;
        let patches = self.patchify(video)?;
        let o = &self.params.outer;
        let img = linear(patches.view(), &o.patch_w, &o.patch_b) + &o.img_pos;
        Ok(HiddenState { text, img })
    }

    pub(crate) fn time_features(&self, t: Timestep) -> Array1<f64> {
        layers::sinusoidal_embedding(t.model_time, self.config.dim)
    }

    pub(crate) fn block_time(&self, block: usize, features: &Array1<f64>) -> Array1<f64> {
        let p = &self.params.blocks[block];
        features.dot(&p.time_w) + &p.time_b
    }

    /// Applies block `block` to the joint hidden state. With `null_text`,
    /// the text segment of K and V is projected from those features instead
    /// (the cross-condition hidden state); Q is always from `h`.
    pub(crate) fn block_forward(
        &self,
        block: usize,
        h: ArrayView2<f64>,
        temb: ArrayView1<f64>,
        null_text: Option<ArrayView2<f64>>,
    ) -> Array2<f64> {
        let p = &self.params.blocks[block];
        let x = &h + &temb;
        let attn = self.attention_sublayer(block, h, x.view(), temb, null_text);
        let y = x + attn;
        let (m, _) = layer_norm(y.view(), p.ln2_g.view(), p.ln2_b.view());
        let g = linear(m.view(), &p.w1, &p.b1).mapv(layers::gelu);
        y + linear(g.view(), &p.w2, &p.b2)
    }

    /// `Attn(Q, K, V)·W_o + b_o` for time-conditioned input `x = h + temb`.
    fn attention_sublayer(
        &self,
        block: usize,
        h: ArrayView2<f64>,
        x: ArrayView2<f64>,
        temb: ArrayView1<f64>,
        null_text: Option<ArrayView2<f64>>,
    ) -> Array2<f64> {
        let p = &self.params.blocks[block];
        let (a, _) = layer_norm(x, p.ln1_g.view(), p.ln1_b.view());
        let q = linear(a.view(), &p.wq, &p.bq);
        let (k, v) = match null_text {
            None => (
                linear(a.view(), &p.wk, &p.bk),
                linear(a.view(), &p.wv, &p.bv),
            ),
            Some(nt) => {
                let img = h.slice(s![self.config.text_len.., ..]);
                self.kv_projections(block, nt, img, temb)
            }
        };
        let (o, _) = multi_head_attention(q.view(), k.view(), v.view(), self.config.heads);
        linear(o.view(), &p.wo, &p.bo)
    }

    /// `K = P_K(h_text | h_img)`, `V = P_V(h_text | h_img)` where `P`
    /// includes the block's timestep conditioning and pre-norm.
    pub(crate) fn kv_projections(
        &self,
        block: usize,
        h_text: ArrayView2<f64>,
        h_img: ArrayView2<f64>,
        temb: ArrayView1<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let p = &self.params.blocks[block];
        let joint = concatenate(Axis(0), &[h_text, h_img]).expect("same feature width");
        let x = joint + &temb;
        let (a, _) = layer_norm(x.view(), p.ln1_g.view(), p.ln1_b.view());
        (
            linear(a.view(), &p.wk, &p.bk),
            linear(a.view(), &p.wv, &p.bv),
        )
    }

    /// Joint attention sublayer output for `h` at `block`, honoring the
    /// control's switching decision for that block.
    pub fn joint_attention(
        &self,
        h: &HiddenState,
        block: usize,
        t: Timestep,
        control: &AttentionControl,
    ) -> Result<HiddenState> {
        let temb = self.block_time(block, &self.time_features(t));
        let joint = h.concat();
        let x = &joint + &temb;
        let null_text = match control.route(block) {
            BlockRoute::Switch | BlockRoute::Split => Some(control.null_text(block, t.index)?),
            _ => None,
        };
        let out = self.attention_sublayer(
            block,
            joint.view(),
            x.view(),
            temb.view(),
            null_text.map(|a| a.view()),
        );
        Ok(HiddenState::split(out.view(), self.config.text_len))
    }

    /// Predicted noise `ε_θ(x_t, t, c)`, with attention control applied per
    /// block.
    pub fn predict_eps(
        &self,
        x_t: &LatentVideo,
        t: Timestep,
        cond: &TextCondition,
        control: &mut AttentionControl,
    ) -> Result<LatentVideo> {
        let h = self.forward_hidden(x_t, t, cond, control, None)?;
        Ok(self.output_head(h.view()))
    }

    /// Runs all blocks and returns the final joint hidden state. When
    /// `trace` is given, the hidden state entering each block is recorded.
    pub fn forward_hidden(
        &self,
        x_t: &LatentVideo,
        t: Timestep,
        cond: &TextCondition,
        control: &mut AttentionControl,
        mut trace: Option<&mut Vec<HiddenState>>,
    ) -> Result<Array2<f64>> {
        control.check_compatible(self.config.num_blocks)?;
        let features = self.time_features(t);
        let mut h = self.embed(cond, x_t, t)?.concat();
        let tl = self.config.text_len;
        for b in 0..self.config.num_blocks {
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(HiddenState::split(h.view(), tl));
            }
            let temb = self.block_time(b, &features);
            h = match control.route(b) {
                BlockRoute::Standard => {
                    control.count_attention();
                    self.block_forward(b, h.view(), temb.view(), None)
                }
                BlockRoute::Capture => {
                    control.capture_null_text(b, h.slice(s![..tl, ..]).to_owned(), t.index)?;
                    control.count_attention();
                    self.block_forward(b, h.view(), temb.view(), None)
                }
                BlockRoute::Switch => {
                    let nt = control.null_text(b, t.index)?.clone();
                    control.count_attention();
                    self.block_forward(b, h.view(), temb.view(), Some(nt.view()))
                }
                BlockRoute::Split => {
                    let state = HiddenState::split(h.view(), tl);
                    let nt = control.null_text(b, t.index)?.clone();
                    let (text, img) = crate::attention_control::split_block_forward(
                        self, b, &state, &nt, t, control,
                    )?;
                    concatenate(Axis(0), &[text.view(), img.view()]).expect("same feature width")
                }
            };
        }
        Ok(h)
    }

    fn output_head(&self, h: ArrayView2<f64>) -> LatentVideo {
        let o = &self.params.outer;
        let img = h.slice(s![self.config.text_len.., ..]);
        let (f, _) = layer_norm(img, o.final_ln_g.view(), o.final_ln_b.view());
        let out = linear(f.view(), &o.out_w, &o.out_b);
        self.unpatchify(out.view())
    }

    pub fn to_container(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        c.insert_json(CONFIG_ENTRY, &self.config)?;
        for v in self.params.views() {
            c.insert_f64(&v.name, &v.dims, v.data)?;
        }
        Ok(c)
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        let config: DenoiserConfig = c.get_json(CONFIG_ENTRY)?;
        config.validate()?;
        let mut params = Params::init(&config, &mut ChaCha8Rng::seed_from_u64(0));
        let expected: Vec<(String, Vec<usize>)> = params
            .views()
            .into_iter()
            .map(|v| (v.name, v.dims))
            .collect();
        for ((name, slot), (_, dims)) in params.views_mut().into_iter().zip(expected) {
            let e = c.require(&name)?;
            if e.dims != dims {
                return Err(Error::Container(format!(
                    "parameter {name} has dims {:?}, expected {dims:?}",
                    e.dims
                )));
            }
            for (d, &x) in slot.iter_mut().zip(&e.data) {
                *d = x as f64;
            }
        }
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_container(&TensorContainer::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::NoiseSchedule;
    use crate::text::TextCondition;
    use rand::Rng;

    fn trained_like(cfg: DenoiserConfig, seed: u64) -> Denoiser {
        // Random output head so predictions are non-trivial.
        let mut m = Denoiser::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        m.params
            .outer
            .out_w
            .mapv_inplace(|_| rng.random_range(-0.3..0.3));
        m
    }

    #[test]
    fn config_validation() {
        assert!(DenoiserConfig::default().validate().is_ok());
        let mut c = DenoiserConfig::default();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = DenoiserConfig::default();
        c.height = 18;
        assert!(c.validate().is_err());
        let mut c = DenoiserConfig::default();
        c.num_blocks = 31;
        assert!(c.validate().is_err());
        assert_eq!(DenoiserConfig::default().img_tokens(), 64);
    }

    #[test]
    fn embed_is_deterministic_and_factorized() {
        let m = Denoiser::new(DenoiserConfig::micro(), 7).unwrap();
        let s = NoiseSchedule::default_inference();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = LatentVideo::randn(m.config().video_shape(), &mut rng);
        let null = TextCondition::null(4);
        let rain = TextCondition::parse("rain", 4).unwrap();
        let a = m.embed(&null, &v, s.timestep(3)).unwrap();
        let b = m.embed(&null, &v, s.timestep(3)).unwrap();
        assert_eq!(a, b);
        let c = m.embed(&rain, &v, s.timestep(3)).unwrap();
        assert_ne!(a.text, c.text);
        assert_eq!(a.img, c.img);

        let zero = LatentVideo::zeros(m.config().video_shape());
        let z = m.embed(&null, &zero, s.timestep(0)).unwrap();
        let bias = &m.params.outer.img_pos + &m.params.outer.patch_b;
        assert_eq!(z.img, bias);
    }

    #[test]
    fn embed_rejects_bad_inputs() {
        let m = Denoiser::new(DenoiserConfig::micro(), 7).unwrap();
        let s = NoiseSchedule::default_inference();
        let v = LatentVideo::zeros(m.config().video_shape());
        let bad_tok = TextCondition::from_slots(vec![TextSlot::Token(crate::text::TokenId(40)); 4]);
        assert!(matches!(
            m.embed(&bad_tok, &v, s.timestep(0)),
            Err(Error::UnknownToken(_))
        ));
        let bad_vid = LatentVideo::zeros(VideoShape::new(1, 1, 4, 4));
        assert!(m
            .embed(&TextCondition::null(4), &bad_vid, s.timestep(0))
            .is_err());
    }

    #[test]
    fn patchify_round_trip() {
        let m = Denoiser::new(DenoiserConfig::default(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = LatentVideo::randn(m.config().video_shape(), &mut rng);
        let back = m.unpatchify(m.patchify(&v).unwrap().view());
        assert!(back.bit_eq(&v));
    }

    #[test]
    fn hidden_state_split_recovers_parts() {
        let m = Denoiser::new(DenoiserConfig::micro(), 3).unwrap();
        let s = NoiseSchedule::default_inference();
        let v = LatentVideo::filled(m.config().video_shape(), 0.3);
        let h = m
            .embed(
                &TextCondition::parse("scene rain", 4).unwrap(),
                &v,
                s.timestep(5),
            )
            .unwrap();
        let joint = h.concat();
        assert_eq!(joint.nrows(), m.config().tokens());
        assert_eq!(HiddenState::split(joint.view(), 4), h);
    }

    #[test]
    fn predict_eps_shape_and_determinism() {
        let m = trained_like(DenoiserConfig::micro(), 11);
        let s = NoiseSchedule::default_inference();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = LatentVideo::randn(m.config().video_shape(), &mut rng);
        let cond = TextCondition::parse("scene light rain", 4).unwrap();
        for t in [0, 50, 99] {
            let mut c = AttentionControl::off();
            let a = m.predict_eps(&x, s.timestep(t), &cond, &mut c).unwrap();
            let b = m.predict_eps(&x, s.timestep(t), &cond, &mut c).unwrap();
            assert_eq!(a.shape(), x.shape());
            assert!(a.bit_eq(&b));
        }
    }

    #[test]
    fn untrained_model_predicts_zero() {
        let m = Denoiser::new(DenoiserConfig::micro(), 5).unwrap();
        let s = NoiseSchedule::default_inference();
        let x = LatentVideo::filled(m.config().video_shape(), 0.5);
        let e = m
            .predict_eps(
                &x,
                s.timestep(10),
                &TextCondition::null(4),
                &mut AttentionControl::off(),
            )
            .unwrap();
        assert!(e.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predict_eps_is_lipschitz_sane() {
        let m = trained_like(DenoiserConfig::default(), 12);
        let s = NoiseSchedule::default_inference();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = LatentVideo::randn(m.config().video_shape(), &mut rng);
        let delta = LatentVideo::randn(m.config().video_shape(), &mut rng);
        let scale = 1e-6 / delta.as_slice().iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        let xp = x.lin_comb(1.0, &delta, scale).unwrap();
        let cond = TextCondition::parse("scene", 4).unwrap();
        let a = m
            .predict_eps(&x, s.timestep(40), &cond, &mut AttentionControl::off())
            .unwrap();
        let b = m
            .predict_eps(&xp, s.timestep(40), &cond, &mut AttentionControl::off())
            .unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-3);
    }

    #[test]
    fn image_token_permutation_equivariance() {
        // Permuting image tokens together with their positional embeddings
        // permutes the block output the same way.
        let m = trained_like(DenoiserConfig::micro(), 13);
        let s = NoiseSchedule::default_inference();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = HiddenState {
            text: Array2::from_shape_fn((4, 8), |_| rng.random_range(-1.0..1.0)),
            img: Array2::from_shape_fn((m.config().img_tokens(), 8), |_| {
                rng.random_range(-1.0..1.0)
            }),
        };
        let n = h.img.nrows();
        let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
        let permuted = HiddenState {
            text: h.text.clone(),
            img: h.img.select(Axis(0), &perm),
        };
        let temb = m.block_time(0, &m.time_features(s.timestep(7)));
        let out = m.block_forward(0, h.concat().view(), temb.view(), None);
        let out_p = m.block_forward(0, permuted.concat().view(), temb.view(), None);
        let a = HiddenState::split(out.view(), 4);
        let b = HiddenState::split(out_p.view(), 4);
        let expected = a.img.select(Axis(0), &perm);
        let diff = (&b.img - &expected)
            .mapv(f64::abs)
            .fold(0.0_f64, |m, &x| m.max(x));
        assert!(diff < 1e-12);
        let tdiff = (&b.text - &a.text)
            .mapv(f64::abs)
            .fold(0.0_f64, |m, &x| m.max(x));
        assert!(tdiff < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = trained_like(DenoiserConfig::micro(), 14);
        let mut m = m;
        m.params.round_to_f32();
        let back = Denoiser::from_container(
            &TensorContainer::from_bytes(&m.to_container().unwrap().to_bytes()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, m);
    }
}
