//! Procedural rainy videos with clean ground truth and exact flow.
//!
//! The background is a smooth field `B(y, x)` seen through a camera moving
//! `v` pixels per frame, so frame `f` is `B(p + f·v)` and the backward flow
//! is `−v` everywhere. Streaks live on the frame torus and fall along their
//! direction; the rain layer is composited as
//! `clean·(1 − α·m) + α·c·m` with a near-white `c`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::TensorContainer;
use crate::error::{Error, Result};
use crate::metrics::FlowField;
use crate::text::TextCondition;
use crate::video::{LatentVideo, VideoShape};

pub const STREAK_COLOR: f64 = 0.95;
/// Streak angles (degrees from vertical, tilting right) drawn by
/// [`RainSceneSpec::sample`].
pub const STREAK_ANGLE_RANGE: (f64, f64) = (5.0, 25.0);
const STREAK_HALF_WIDTH: f64 = 0.8;
const FLAKE_RADIUS: f64 = 0.9;
const BUNDLE_ENTRY: &str = "__bundle_json__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    None,
    Light,
    Heavy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precipitation {
    Rain,
    Snow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    /// Linear color gradient plus one broad blob.
    Gradient,
    /// Several drifting soft blobs over a flat base.
    Shapes,
    /// A single flat value in every channel.
    Flat(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RainSceneSpec {
    pub seed: u64,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub background: BackgroundKind,
    /// `(dy, dx)` pixels per frame.
    pub camera_velocity: (f64, f64),
    pub streak_count: usize,
    pub streak_angle_deg: f64,
    pub streak_length: f64,
    pub streak_opacity: f64,
    pub fall_speed: f64,
    pub intensity: Intensity,
    pub precipitation: Precipitation,
}

impl RainSceneSpec {
    /// Random scene of the given class, with parameters drawn from the
    /// class's band.
    pub fn sample(
        intensity: Intensity,
        precipitation: Precipitation,
        shape: VideoShape,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ce0e);
        let background = if rng.random_bool(0.5) {
            BackgroundKind::Gradient
        } else {
            BackgroundKind::Shapes
        };
        let speed = rng.random_range(0.3..1.2);
        let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (count, opacity, length, fall) = match intensity {
            Intensity::None => (0, 0.0, 0.0, 0.0),
            Intensity::Light => (
                rng.random_range(3..=5),
                rng.random_range(0.35..0.5),
                rng.random_range(3.0..5.0),
                rng.random_range(2.5..4.0),
            ),
            Intensity::Heavy => (
                rng.random_range(8..=12),
                rng.random_range(0.6..0.8),
                rng.random_range(5.0..8.0),
                rng.random_range(4.0..6.0),
            ),
        };
        let (length, fall) = match precipitation {
            Precipitation::Rain => (length, fall),
            Precipitation::Snow => (0.0, fall * 0.3),
        };
        Self {
            seed,
            frames: shape.frames,
            channels: shape.channels,
            height: shape.height,
            width: shape.width,
            background,
            camera_velocity: (speed * heading.sin(), speed * heading.cos()),
            streak_count: count,
            streak_angle_deg: rng.random_range(STREAK_ANGLE_RANGE.0..STREAK_ANGLE_RANGE.1),
            streak_length: length,
            streak_opacity: opacity,
            fall_speed: fall,
            intensity,
            precipitation,
        }
    }

    pub fn shape(&self) -> VideoShape {
        VideoShape::new(self.frames, self.channels, self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.frames < 2 || self.channels == 0 || self.height < 4 || self.width < 4 {
            return bad(format!(
                "degenerate scene {}x{}x{}x{}",
                self.frames, self.channels, self.height, self.width
            ));
        }
        if !(0.0..=1.0).contains(&self.streak_opacity) {
            return bad(format!("opacity {} outside [0, 1]", self.streak_opacity));
        }
        if self.streak_length < 0.0 || self.fall_speed < 0.0 {
            return bad("streak length and fall speed must be nonnegative".into());
        }
        if self.streak_length >= 0.5 * self.height.min(self.width) as f64 {
            return bad(format!(
                "streak length {} too long for the frame",
                self.streak_length
            ));
        }
        if (self.intensity == Intensity::None) != (self.streak_count == 0) {
            return bad(format!(
                "intensity {:?} inconsistent with {} streaks",
                self.intensity, self.streak_count
            ));
        }
        if let BackgroundKind::Flat(v) = self.background {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("flat background {v} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// "scene", "scene light rain", "scene heavy snow", ...
    pub fn caption(&self, text_len: usize) -> Result<TextCondition> {
        let concept = match self.precipitation {
            Precipitation::Rain => "rain",
            Precipitation::Snow => "snow",
        };
        let prompt = match self.intensity {
            Intensity::None => "scene".to_string(),
            Intensity::Light => format!("scene light {concept}"),
            Intensity::Heavy => format!("scene heavy {concept}"),
        };
        TextCondition::parse(&prompt, text_len)
    }

    fn direction(&self) -> (f64, f64) {
        let a = self.streak_angle_deg.to_radians();
        (a.cos(), a.sin())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub spec: RainSceneSpec,
    pub clean: LatentVideo,
    pub rainy: LatentVideo,
    /// Coverage `m ∈ [0, 1]`, `frames × 1 × H × W`.
    pub rain_mask: LatentVideo,
    pub flow: FlowField,
    pub caption: TextCondition,
}

impl SceneBundle {
    /// `rainy − clean`.
    pub fn rain_layer(&self) -> LatentVideo {
        self.rainy.sub(&self.clean).expect("same shape")
    }

    /// Mean squared rain layer over all pixels.
    pub fn rain_energy(&self) -> f64 {
        self.rain_layer().mean_square()
    }

    pub fn to_container(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        c.insert_json(
            BUNDLE_ENTRY,
            &serde_json::json!({ "spec": self.spec, "caption": self.caption }),
        )?;
        c.insert_video("clean", &self.clean)?;
        c.insert_video("rainy", &self.rainy)?;
        c.insert_video("rain_mask", &self.rain_mask)?;
        let flow = &self.flow.0;
        c.insert_f64("flow", flow.shape(), flow.as_slice().expect("contiguous"))?;
        Ok(c)
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        let header: serde_json::Value = c.get_json(BUNDLE_ENTRY)?;
        let spec: RainSceneSpec = serde_json::from_value(header["spec"].clone())?;
        let caption: TextCondition = serde_json::from_value(header["caption"].clone())?;
        let (dims, data) = c.get_f64("flow")?;
        if dims.len() != 4 {
            return Err(Error::Container("flow entry must be 4-D".into()));
        }
        let flow = ndarray::Array4::from_shape_vec((dims[0], dims[1], dims[2], dims[3]), data)
            .map_err(|e| Error::Container(e.to_string()))?;
        Ok(Self {
            spec,
            clean: c.get_video("clean")?,
            rainy: c.get_video("rainy")?,
            rain_mask: c.get_video("rain_mask")?,
            flow: FlowField(flow),
            caption,
        })
    }
}

struct Blob {
    cy: f64,
    cx: f64,
    inv_two_var: f64,
    amp: Vec<f64>,
}

struct Background {
    base: Vec<f64>,
    grad: Vec<(f64, f64)>,
    blobs: Vec<Blob>,
}

impl Background {
    fn new(spec: &RainSceneSpec, rng: &mut ChaCha8Rng) -> Self {
        let ch = spec.channels;
        let size = spec.height.max(spec.width) as f64;
        let blob = |rng: &mut ChaCha8Rng, width: (f64, f64)| {
            let s: f64 = rng.random_range(width.0..width.1);
            Blob {
                cy: rng.random_range(-0.25..1.25) * spec.height as f64,
                cx: rng.random_range(-0.25..1.25) * spec.width as f64,
                inv_two_var: 1.0 / (2.0 * s * s),
                amp: (0..ch).map(|_| rng.random_range(-0.25..0.25)).collect(),
            }
        };
        match spec.background {
            BackgroundKind::Flat(v) => Self {
                base: vec![v; ch],
                grad: vec![(0.0, 0.0); ch],
                blobs: Vec::new(),
            },
            BackgroundKind::Gradient => {
                let base = (0..ch).map(|_| rng.random_range(0.3..0.6)).collect();
                let grad = (0..ch)
                    .map(|_| {
                        (
                            rng.random_range(-0.25..0.25) / size,
                            rng.random_range(-0.25..0.25) / size,
                        )
                    })
                    .collect();
                let blobs = vec![blob(rng, (6.0, 9.0))];
                Self { base, grad, blobs }
            }
            BackgroundKind::Shapes => {
                let base = (0..ch).map(|_| rng.random_range(0.3..0.6)).collect();
                let n = rng.random_range(2..=3);
                let blobs = (0..n).map(|_| blob(rng, (4.0, 6.0))).collect();
                Self {
                    base,
                    grad: vec![(0.0, 0.0); ch],
                    blobs,
                }
            }
        }
    }

    fn value(&self, c: usize, y: f64, x: f64) -> f64 {
        let mut v = self.base[c] + self.grad[c].0 * y + self.grad[c].1 * x;
        for b in &self.blobs {
            let d2 = (y - b.cy).powi(2) + (x - b.cx).powi(2);
            v += b.amp[c] * (-d2 * b.inv_two_var).exp();
        }
        v.clamp(0.0, 1.0)
    }
}

/// Centers of the streaks (or flakes) at frame `f`, on the frame torus.
pub fn streak_positions(spec: &RainSceneSpec, frame: usize) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x57ea_4500);
    let (dy, dx) = spec.direction();
    let (h, w) = (spec.height as f64, spec.width as f64);
    (0..spec.streak_count)
        .map(|_| {
            let y0: f64 = rng.random_range(0.0..h);
            let x0: f64 = rng.random_range(0.0..w);
            let shift = spec.fall_speed * frame as f64;
            (
                (y0 + shift * dy).rem_euclid(h),
                (x0 + shift * dx).rem_euclid(w),
            )
        })
        .collect()
}

fn wrap(d: f64, period: f64) -> f64 {
    let r = d.rem_euclid(period);
    if r >= period / 2.0 {
        r - period
    } else {
        r
    }
}

/// Coverage of one frame, `H × W`, from the streak centers.
fn coverage(spec: &RainSceneSpec, frame: usize) -> ndarray::Array2<f64> {
    let (h, w) = (spec.height, spec.width);
    let (dy, dx) = spec.direction();
    let half = spec.streak_length / 2.0;
    let mut m = ndarray::Array2::zeros((h, w));
    for (cy, cx) in streak_positions(spec, frame) {
        for y in 0..h {
            for x in 0..w {
                let py = wrap(y as f64 - cy, h as f64);
                let px = wrap(x as f64 - cx, w as f64);
                let v = match spec.precipitation {
                    Precipitation::Rain => {
                        let along = (py * dy + px * dx).clamp(-half, half);
                        let dist = ((py - along * dy).powi(2) + (px - along * dx).powi(2)).sqrt();
                        (1.0 - dist / STREAK_HALF_WIDTH).max(0.0)
                    }
                    Precipitation::Snow => {
                        let dist = (py * py + px * px).sqrt();
                        ((FLAKE_RADIUS + 0.5 - dist) / 0.5).clamp(0.0, 1.0)
                    }
                };
                let cell = &mut m[[y, x]];
                *cell = f64::max(*cell, v);
            }
        }
    }
    m
}

/// `clamp(clean·(1 − α·m) + α·color·m)` with `m` broadcast over channels.
pub fn composite(
    clean: &LatentVideo,
    mask: &LatentVideo,
    opacity: f64,
    color: f64,
) -> Result<LatentVideo> {
    let s = clean.shape();
    crate::error::check_shape(&[s.frames, 1, s.height, s.width], &mask.shape().dims())?;
    let mut out = clean.clone();
    let m = mask.array();
    for ((f, _, y, x), v) in out.array_mut().indexed_iter_mut() {
        let a = opacity * m[[f, 0, y, x]];
        if a > 0.0 {
            *v = (*v * (1.0 - a) + a * color).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

pub fn render(spec: &RainSceneSpec) -> Result<SceneBundle> {
    spec.validate()?;
    let shape = spec.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bg = Background::new(spec, &mut rng);
    let (vy, vx) = spec.camera_velocity;
    let clean = LatentVideo::from_array(ndarray::Array4::from_shape_fn(
        shape.dims(),
        |(f, c, y, x)| bg.value(c, y as f64 + f as f64 * vy, x as f64 + f as f64 * vx),
    ));
    let mut mask = ndarray::Array4::zeros((spec.frames, 1, spec.height, spec.width));
    for f in 0..spec.frames {
        mask.slice_mut(ndarray::s![f, 0, .., ..])
            .assign(&coverage(spec, f));
    }
    let rain_mask = LatentVideo::from_array(mask);
    let rainy = composite(&clean, &rain_mask, spec.streak_opacity, STREAK_COLOR)?;
    let flow = FlowField::uniform(spec.frames - 1, spec.height, spec.width, -vy, -vx);
    Ok(SceneBundle {
        caption: spec.caption(4)?,
        spec: spec.clone(),
        clean,
        rainy,
        rain_mask,
        flow,
    })
}

/// Class cycle of the training set. Rain is the minority, so the null
/// prediction does not already assume it.
pub const TRAIN_CLASSES: [Intensity; 5] = [
    Intensity::None,
    Intensity::None,
    Intensity::None,
    Intensity::Light,
    Intensity::Heavy,
];

/// `n` scenes cycling through [`TRAIN_CLASSES`].
pub fn make_dataset(n: usize, seed: u64, shape: VideoShape) -> Result<Vec<SceneBundle>> {
    make_dataset_with(n, seed, shape, Precipitation::Rain)
}

pub fn make_dataset_with(
    n: usize,
    seed: u64,
    shape: VideoShape,
    precipitation: Precipitation,
) -> Result<Vec<SceneBundle>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = TRAIN_CLASSES[i % TRAIN_CLASSES.len()];
            let spec = RainSceneSpec::sample(class, precipitation, shape, rng.random());
            render(&spec)
        })
        .collect()
}

/// `n` rainy scenes alternating light and heavy, for evaluation.
pub fn make_rainy_set(n: usize, seed: u64, shape: VideoShape) -> Result<Vec<SceneBundle>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = [Intensity::Light, Intensity::Heavy][i % 2];
            render(&RainSceneSpec::sample(
                class,
                Precipitation::Rain,
                shape,
                rng.random(),
            ))
        })
        .collect()
}
