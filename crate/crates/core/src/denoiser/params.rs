use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::DenoiserConfig;

/// Named, flat view of one parameter tensor.
pub struct ParamView<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [f64],
}

macro_rules! param_group {
    ($(#[$meta:meta])* $name:ident { $($field:ident : $ty:ty),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            $(pub $field: $ty),*
        }

        impl $name {
            fn push_views<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
                $(out.push(ParamView {
                    name: format!("{prefix}{}", stringify!($field)),
                    dims: self.$field.shape().to_vec(),
                    data: self.$field.as_slice().expect("parameters are contiguous"),
                });)*
            }

            fn push_views_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
                $(out.push((
                    format!("{prefix}{}", stringify!($field)),
                    self.$field.as_slice_mut().expect("parameters are contiguous"),
                ));)*
            }

            fn zeros_like(&self) -> Self {
                Self { $($field: <$ty>::zeros(self.$field.raw_dim())),* }
            }
        }
    };
}

param_group! {
    /// Parameters of one joint-attention block.
    BlockParams {
        time_w: Array2<f64>,
        time_b: Array1<f64>,
        ln1_g: Array1<f64>,
        ln1_b: Array1<f64>,
        wq: Array2<f64>,
        bq: Array1<f64>,
        wk: Array2<f64>,
        bk: Array1<f64>,
        wv: Array2<f64>,
        bv: Array1<f64>,
        wo: Array2<f64>,
        bo: Array1<f64>,
        ln2_g: Array1<f64>,
        ln2_b: Array1<f64>,
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    }
}

param_group! {
    /// Token, position and patch embeddings plus the output head.
    OuterParams {
        token_emb: Array2<f64>,
        text_pos: Array2<f64>,
        patch_w: Array2<f64>,
        patch_b: Array1<f64>,
        img_pos: Array2<f64>,
        final_ln_g: Array1<f64>,
        final_ln_b: Array1<f64>,
        out_w: Array2<f64>,
        out_b: Array1<f64>,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub outer: OuterParams,
    pub blocks: Vec<BlockParams>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

impl BlockParams {
    fn init<R: Rng + ?Sized>(cfg: &DenoiserConfig, rng: &mut R) -> Self {
        let d = cfg.dim;
        let f = cfg.ffn_dim;
        let sd = 1.0 / (d as f64).sqrt();
        let out_sd = sd / (2.0 * cfg.num_blocks as f64).sqrt();
        Self {
            time_w: normal(rng, d, d, 0.5 * sd),
            time_b: Array1::zeros(d),
            ln1_g: Array1::ones(d),
            ln1_b: Array1::zeros(d),
            wq: normal(rng, d, d, sd),
            bq: Array1::zeros(d),
            wk: normal(rng, d, d, sd),
            bk: Array1::zeros(d),
            wv: normal(rng, d, d, sd),
            bv: Array1::zeros(d),
            wo: normal(rng, d, d, out_sd),
            bo: Array1::zeros(d),
            ln2_g: Array1::ones(d),
            ln2_b: Array1::zeros(d),
            w1: normal(rng, d, f, sd),
            b1: Array1::zeros(f),
            w2: normal(rng, f, d, out_sd * (d as f64 / f as f64).sqrt()),
            b2: Array1::zeros(d),
        }
    }
}

impl Params {
    /// Random initialization with a zero output head, so an untrained model
    /// predicts zero noise.
    pub fn init<R: Rng + ?Sized>(cfg: &DenoiserConfig, rng: &mut R) -> Self {
        let d = cfg.dim;
        let p = cfg.patch_dim();
        let outer = OuterParams {
            token_emb: normal(rng, cfg.vocab_size, d, 1.0),
            text_pos: normal(rng, cfg.text_len, d, 0.1),
            patch_w: normal(rng, p, d, 1.0 / (p as f64).sqrt()),
            patch_b: Array1::zeros(d),
            img_pos: normal(rng, cfg.img_tokens(), d, 0.1),
            final_ln_g: Array1::ones(d),
            final_ln_b: Array1::zeros(d),
            out_w: Array2::zeros((d, p)),
            out_b: Array1::zeros(p),
        };
        let blocks = (0..cfg.num_blocks)
            .map(|_| BlockParams::init(cfg, rng))
            .collect();
        let mut params = Self { outer, blocks };
        params.round_to_f32();
        params
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            outer: self.outer.zeros_like(),
            blocks: self.blocks.iter().map(BlockParams::zeros_like).collect(),
        }
    }

    pub fn views(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        self.outer.push_views("", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.push_views(&format!("blocks.{i}."), &mut out);
        }
        out
    }

    pub fn views_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        self.outer.push_views_mut("", &mut out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.push_views_mut(&format!("blocks.{i}."), &mut out);
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.views().iter().map(|v| v.data.len()).sum()
    }

    /// Rounds every weight to the nearest binary32 value so checkpoints
    /// round-trip exactly.
    pub fn round_to_f32(&mut self) {
        for (_, data) in self.views_mut() {
            for x in data.iter_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.views()
            .iter()
            .all(|v| v.data.iter().all(|x| x.is_finite()))
    }

    pub fn sq_norm(&self) -> f64 {
        self.views()
            .iter()
            .map(|v| v.data.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        let src = other.views();
        for ((_, dst), s) in self.views_mut().into_iter().zip(src) {
            for (d, x) in dst.iter_mut().zip(s.data) {
                *d += scale * x;
            }
        }
    }
}
