//! Toy-scale studies: prompt disentanglement probes and inversion sweeps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attention_control::AttentionControl;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::inversion::{
    ddim_invert, ddim_reconstruct, ddpm_invert, reconstruct_from, sdedit_invert, sdedit_reconstruct,
};
use crate::metrics::{bilinear, psnr};
use crate::plot;
use crate::sampling::generate;
use crate::schedule::NoiseSchedule;
use crate::synthetic_rain::STREAK_ANGLE_RANGE;
use crate::text::TextCondition;
use crate::video::{latent_to_pixels, pixels_to_latent, quantize_8bit, LatentVideo};

/// Mean streak angle of the generator, used by the probe's oriented filter.
pub fn default_rain_angle() -> f64 {
    0.5 * (STREAK_ANGLE_RANGE.0 + STREAK_ANGLE_RANGE.1)
}

/// Oriented high-frequency energy of a `[0, 1]` pixel video: mean squared
/// derivative across the streak direction minus the one along it, floored
/// at zero. Streaks at `angle_deg` raise the first term only.
pub fn rain_band_energy(pixels: &LatentVideo, angle_deg: f64) -> f64 {
    let a = angle_deg.to_radians();
    let (dy, dx) = (a.cos(), a.sin());
    let (ny, nx) = (-dx, dy);
    let s = pixels.shape();
    let border = 2;
    if s.height <= 2 * border || s.width <= 2 * border {
        return 0.0;
    }
    let arr = pixels.array();
    let (mut across, mut along, mut n) = (0.0, 0.0, 0usize);
    for f in 0..s.frames {
        for c in 0..s.channels {
            let img = arr.slice(ndarray::s![f, c, .., ..]);
            for y in border..s.height - border {
                for x in border..s.width - border {
                    let (yf, xf) = (y as f64, x as f64);
                    let gn =
                        0.5 * (bilinear(img, yf + ny, xf + nx) - bilinear(img, yf - ny, xf - nx));
                    let gd =
                        0.5 * (bilinear(img, yf + dy, xf + dx) - bilinear(img, yf - dy, xf - dx));
                    across += gn * gn;
                    along += gd * gd;
                    n += 1;
                }
            }
        }
    }
    ((across - along) / n as f64).max(0.0)
}

/// Spatial variance of the 5×5 box-filtered frames: energy of large-scale
/// background content, averaged over frames and channels.
pub fn background_energy(pixels: &LatentVideo) -> f64 {
    let s = pixels.shape();
    let arr = pixels.array();
    let mut total = 0.0;
    for f in 0..s.frames {
        for c in 0..s.channels {
            let mut blurred = Vec::with_capacity(s.height * s.width);
            for y in 0..s.height as isize {
                for x in 0..s.width as isize {
                    let mut sum = 0.0;
                    let mut k = 0.0;
                    for yy in (y - 2).max(0)..=(y + 2).min(s.height as isize - 1) {
                        for xx in (x - 2).max(0)..=(x + 2).min(s.width as isize - 1) {
                            sum += arr[[f, c, yy as usize, xx as usize]];
                            k += 1.0;
                        }
                    }
                    blurred.push(sum / k);
                }
            }
            let mean = blurred.iter().sum::<f64>() / blurred.len() as f64;
            total += blurred.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / blurred.len() as f64;
        }
    }
    total / (s.frames * s.channels) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub condition: String,
    pub rain_energy: f64,
    pub background_energy: f64,
    pub per_seed_rain_energy: Vec<f64>,
    pub per_seed_background_energy: Vec<f64>,
}

/// Generates one video per seed from pure noise under `cond` and measures
/// rain-band and background energy.
pub fn prompt_probe(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    cond: &TextCondition,
    seeds: &[u64],
    angle_deg: f64,
) -> Result<ProbeReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let mut rain = Vec::with_capacity(seeds.len());
    let mut bg = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let x = generate(model, schedule, cond, seed, &mut AttentionControl::off())?;
        let px = latent_to_pixels(&x);
        rain.push(rain_band_energy(&px, angle_deg));
        bg.push(background_energy(&px));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ProbeReport {
        condition: cond.to_string(),
        rain_energy: mean(&rain),
        background_energy: mean(&bg),
        per_seed_rain_energy: rain,
        per_seed_background_energy: bg,
    })
}

/// Welch's t statistic for the difference of two sample means.
pub fn welch_t(a: &[f64], b: &[f64]) -> f64 {
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (m, var, n)
    };
    let (ma, va, na) = stats(a);
    let (mb, vb, nb) = stats(b);
    let se = (va / na + vb / nb).sqrt();
    if se == 0.0 {
        return if ma == mb {
            0.0
        } else {
            f64::INFINITY.copysign(ma - mb)
        };
    }
    (ma - mb) / se
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InversionMethod {
    Sdedit,
    Ddim,
    Ddpm,
}

impl InversionMethod {
    pub const ALL: [InversionMethod; 3] = [Self::Ddpm, Self::Ddim, Self::Sdedit];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sdedit => "sdedit",
            Self::Ddim => "ddim",
            Self::Ddpm => "ddpm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: InversionMethod,
    pub t_skip: usize,
    pub mean_psnr: f64,
    pub psnr_per_video: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn get(&self, method: InversionMethod, t_skip: usize) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.t_skip == t_skip)
    }

    pub fn t_skips(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.rows.iter().map(|r| r.t_skip).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// `max − min` of a method's mean PSNR across skips. Identical
    /// infinities count as no variation.
    pub fn spread(&self, method: InversionMethod) -> f64 {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.mean_psnr)
            .collect();
        psnr_spread(&v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,t_skip,mean_psnr\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.method.name(), r.t_skip, r.mean_psnr);
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let xs: Vec<f64> = self.t_skips().iter().map(|&t| t as f64).collect();
        let series: Vec<(String, Vec<f64>)> = InversionMethod::ALL
            .iter()
            .filter(|m| self.rows.iter().any(|r| r.method == **m))
            .map(|&m| {
                let ys = self
                    .t_skips()
                    .iter()
                    .map(|&t| self.get(m, t).map_or(f64::NAN, |r| r.mean_psnr))
                    .collect();
                (m.name().to_string(), ys)
            })
            .collect();
        plot::line_chart(
            "Reconstruction PSNR after inversion (infinite at top)",
            "t_skip",
            "PSNR (dB, 8-bit)",
            &xs,
            &series,
        )
    }
}

pub fn psnr_spread(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let inf = values.iter().filter(|v| v.is_infinite()).count();
    if inf == values.len() {
        return 0.0;
    }
    if inf > 0 {
        return f64::INFINITY;
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    hi - lo
}

/// For each video, method and skip `t_s`, inverts to level `T−1−t_s` and
/// reconstructs with the null prompt. PSNR is measured on 8-bit frames
/// against the 8-bit source, which is what the latent is built from.
pub fn inversion_sweep(
    model: &Denoiser,
    s: &NoiseSchedule,
    videos: &[LatentVideo],
    t_skips: &[usize],
    methods: &[InversionMethod],
    seed: u64,
) -> Result<SweepTable> {
    let n = s.num_steps();
    if let Some(&bad) = t_skips.iter().find(|&&t| t >= n) {
        return Err(Error::InvalidArgument(format!(
            "t_skip {bad} must be below {n}"
        )));
    }
    if videos.is_empty() {
        return Err(Error::InvalidArgument("no videos to sweep".into()));
    }
    let null = TextCondition::null(model.config().text_len);
    let mut cells: Vec<Vec<f64>> = vec![Vec::new(); methods.len() * t_skips.len()];
    for (vi, video) in videos.iter().enumerate() {
        let q = quantize_8bit(video);
        let x0 = pixels_to_latent(&q.scale(1.0 / 255.0));
        let vseed = seed.wrapping_add(vi as u64 * 7919);
        let score = |recon: &LatentVideo| psnr(&quantize_8bit(&latent_to_pixels(recon)), &q, 255.0);
        for (mi, &method) in methods.iter().enumerate() {
            match method {
                InversionMethod::Ddpm => {
                    let record = ddpm_invert(&x0, &null, model, s, vseed)?;
                    for (ti, &ts) in t_skips.iter().enumerate() {
                        let recon = reconstruct_from(
                            &record,
                            n - 1 - ts,
                            &null,
                            model,
                            s,
                            None,
                            &mut AttentionControl::off(),
                        )?;
                        cells[mi * t_skips.len() + ti].push(score(&recon)?);
                    }
                }
                InversionMethod::Ddim => {
                    let traj = ddim_invert(
                        &x0,
                        &null,
                        model,
                        s,
                        n - 1 - t_skips.iter().min().copied().unwrap_or(0),
                    )?;
                    for (ti, &ts) in t_skips.iter().enumerate() {
                        let start = n - 1 - ts;
                        let recon = ddim_reconstruct(&traj[start], start, &null, model, s)?;
                        cells[mi * t_skips.len() + ti].push(score(&recon)?);
                    }
                }
                InversionMethod::Sdedit => {
                    for (ti, &ts) in t_skips.iter().enumerate() {
                        let start = n - 1 - ts;
                        let noisy = sdedit_invert(&x0, start, s, vseed)?;
                        let recon = sdedit_reconstruct(&noisy, start, &null, model, s, vseed ^ 1)?;
                        cells[mi * t_skips.len() + ti].push(score(&recon)?);
                    }
                }
            }
        }
    }
    let mut rows = Vec::new();
    for (mi, &method) in methods.iter().enumerate() {
        for (ti, &t_skip) in t_skips.iter().enumerate() {
            let v = std::mem::take(&mut cells[mi * t_skips.len() + ti]);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            rows.push(SweepRow {
                method,
                t_skip,
                mean_psnr: mean,
                psnr_per_video: v,
            });
        }
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic_rain::{render, Intensity, Precipitation, RainSceneSpec};
    use crate::video::VideoShape;

    #[test]
    fn rain_band_energy_prefers_streaks() {
        let shape = VideoShape::new(4, 3, 16, 16);
        let mut clean_e = 0.0;
        let mut rain_e = 0.0;
        for seed in 0..6 {
            let spec = RainSceneSpec::sample(Intensity::Heavy, Precipitation::Rain, shape, seed);
            let b = render(&spec).unwrap();
            clean_e += rain_band_energy(&b.clean, spec.streak_angle_deg);
            rain_e += rain_band_energy(&b.rainy, spec.streak_angle_deg);
        }
        assert!(rain_e > 5.0 * clean_e, "{rain_e} vs {clean_e}");
    }

    #[test]
    fn background_energy_of_flat_video_is_zero() {
        let v = LatentVideo::filled(VideoShape::new(2, 1, 8, 8), 0.3);
        assert!(background_energy(&v) < 1e-30);
    }

    #[test]
    fn spread_handles_infinities() {
        assert_eq!(psnr_spread(&[f64::INFINITY; 3]), 0.0);
        assert_eq!(psnr_spread(&[f64::INFINITY, 40.0]), f64::INFINITY);
        assert_eq!(psnr_spread(&[30.0, 30.4, 30.1]), 30.4 - 30.0);
    }

    #[test]
    fn welch_sign_and_zero() {
        assert_eq!(welch_t(&[1.0, 1.0], &[1.0, 1.0]), 0.0);
        assert!(welch_t(&[2.0, 2.1, 1.9], &[1.0, 1.1, 0.9]) > 5.0);
    }
}
