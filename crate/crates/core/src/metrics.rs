//! PSNR, ground-truth-flow warp error and rain residual energy.

use std::fmt::Write as _;

use ndarray::{Array4, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::video::LatentVideo;

/// Backward flow between consecutive frames, `pairs × 2 × H × W` with
/// channel 0 the vertical and channel 1 the horizontal displacement.
///
/// For pair `f`, frame `f` at pixel `p` matches frame `f+1` at `p + w_f(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField(pub Array4<f64>);

impl FlowField {
    pub fn uniform(pairs: usize, height: usize, width: usize, dy: f64, dx: f64) -> Self {
        let mut a = Array4::zeros((pairs, 2, height, width));
        a.slice_mut(ndarray::s![.., 0, .., ..]).fill(dy);
        a.slice_mut(ndarray::s![.., 1, .., ..]).fill(dx);
        Self(a)
    }

    pub fn pairs(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn max_magnitude(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// `10·log10(peak² / MSE)`, `+∞` for identical inputs.
pub fn psnr(a: &LatentVideo, b: &LatentVideo, peak: f64) -> Result<f64> {
    let mse = a.sub(b)?.mean_square();
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Per-frame PSNR.
pub fn psnr_per_frame(a: &LatentVideo, b: &LatentVideo, peak: f64) -> Result<Vec<f64>> {
    a.ensure_same_shape(b)?;
    let d = a.array() - b.array();
    Ok(d.outer_iter()
        .map(|f| {
            let mse = f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64;
            if mse == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (peak * peak / mse).log10()
            }
        })
        .collect())
}

/// Bilinear sample with edge clamping.
pub fn bilinear(img: ArrayView2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = img.dim();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = img[[y0, x0]] * (1.0 - fx) + img[[y0, x1]] * fx;
    let bot = img[[y1, x0]] * (1.0 - fx) + img[[y1, x1]] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Width of the excluded border: enough that every warped sample of an
/// interior pixel lies inside the frame.
pub fn interior_border(flow: &FlowField) -> usize {
    flow.max_magnitude().ceil() as usize + 1
}

/// Frame `f+1` warped back onto frame `f` by pair `f` of `flow`.
pub fn warp_frame(video: &LatentVideo, flow: &FlowField, pair: usize) -> Array4<f64> {
    let s = video.shape();
    let a = video.array();
    let mut out = Array4::zeros((1, s.channels, s.height, s.width));
    for c in 0..s.channels {
        let next = a.slice(ndarray::s![pair + 1, c, .., ..]);
        for y in 0..s.height {
            for x in 0..s.width {
                let dy = flow.0[[pair, 0, y, x]];
                let dx = flow.0[[pair, 1, y, x]];
                out[[0, c, y, x]] = bilinear(next, y as f64 + dy, x as f64 + dx);
            }
        }
    }
    out
}

fn check_flow(video: &LatentVideo, flow: &FlowField) -> Result<usize> {
    let s = video.shape();
    if s.frames < 2 {
        return Err(Error::InvalidArgument(
            "warp error needs at least 2 frames".into(),
        ));
    }
    check_shape(&[s.frames - 1, 2, s.height, s.width], flow.0.shape())?;
    let border = interior_border(flow);
    if 2 * border >= s.height || 2 * border >= s.width {
        return Err(Error::InvalidArgument(format!(
            "flow magnitude {} leaves no interior in a {}x{} frame",
            flow.max_magnitude(),
            s.height,
            s.width
        )));
    }
    Ok(border)
}

/// Mean absolute difference between each frame and its warped successor,
/// over interior pixels, channels and frame pairs.
pub fn warp_error(video: &LatentVideo, flow: &FlowField) -> Result<f64> {
    Ok(warp_error_per_pair(video, flow)?.iter().sum::<f64>() / flow.pairs() as f64)
}

pub fn warp_error_per_pair(video: &LatentVideo, flow: &FlowField) -> Result<Vec<f64>> {
    let border = check_flow(video, flow)?;
    let s = video.shape();
    let a = video.array();
    let mut out = Vec::with_capacity(s.frames - 1);
    for f in 0..s.frames - 1 {
        let warped = warp_frame(video, flow, f);
        let mut sum = 0.0;
        let mut n = 0usize;
        for c in 0..s.channels {
            for y in border..s.height - border {
                for x in border..s.width - border {
                    sum += (a[[f, c, y, x]] - warped[[0, c, y, x]]).abs();
                    n += 1;
                }
            }
        }
        out.push(sum / n as f64);
    }
    Ok(out)
}

/// Mean squared `output − clean` over pixels where the mask is positive.
/// The mask is `frames × 1 × H × W` and applies to every channel. An empty
/// mask gives zero.
pub fn rain_residual(output: &LatentVideo, clean: &LatentVideo, mask: &LatentVideo) -> Result<f64> {
    let (sum, n) = masked_sums(output, clean, mask, None)?;
    if n == 0 {
        log::warn!("rain_residual: empty rain mask");
        return Ok(0.0);
    }
    Ok(sum / n as f64)
}

pub fn rain_residual_per_frame(
    output: &LatentVideo,
    clean: &LatentVideo,
    mask: &LatentVideo,
) -> Result<Vec<f64>> {
    (0..output.shape().frames)
        .map(|f| {
            let (sum, n) = masked_sums(output, clean, mask, Some(f))?;
            Ok(if n == 0 { 0.0 } else { sum / n as f64 })
        })
        .collect()
}

fn masked_sums(
    output: &LatentVideo,
    clean: &LatentVideo,
    mask: &LatentVideo,
    frame: Option<usize>,
) -> Result<(f64, usize)> {
    output.ensure_same_shape(clean)?;
    let s = output.shape();
    check_shape(&[s.frames, 1, s.height, s.width], &mask.shape().dims())?;
    let (o, c, m) = (output.array(), clean.array(), mask.array());
    let frames = match frame {
        Some(f) => f..f + 1,
        None => 0..s.frames,
    };
    let mut sum = 0.0;
    let mut n = 0usize;
    for f in frames {
        for y in 0..s.height {
            for x in 0..s.width {
                if m[[f, 0, y, x]] > 0.0 {
                    for ch in 0..s.channels {
                        let d = o[[f, ch, y, x]] - c[[f, ch, y, x]];
                        sum += d * d;
                        n += 1;
                    }
                }
            }
        }
    }
    Ok((sum, n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr_vs_clean: f64,
    pub warp_error: f64,
    pub rain_residual: f64,
    pub per_frame_psnr: Vec<f64>,
    pub per_pair_warp_error: Vec<f64>,
    pub per_frame_rain_residual: Vec<f64>,
}

impl MetricsReport {
    /// All metrics for a `[0, 1]` pixel video against the clean reference.
    pub fn compute(
        output: &LatentVideo,
        clean: &LatentVideo,
        flow: &FlowField,
        mask: &LatentVideo,
    ) -> Result<Self> {
        Ok(Self {
            psnr_vs_clean: psnr(output, clean, 1.0)?,
            warp_error: warp_error(output, flow)?,
            rain_residual: rain_residual(output, clean, mask)?,
            per_frame_psnr: psnr_per_frame(output, clean, 1.0)?,
            per_pair_warp_error: warp_error_per_pair(output, flow)?,
            per_frame_rain_residual: rain_residual_per_frame(output, clean, mask)?,
        })
    }

    /// JSON cannot carry infinities, so they are written as strings.
    pub fn to_json(&self) -> serde_json::Value {
        fn num(v: f64) -> serde_json::Value {
            if v.is_finite() {
                serde_json::json!(v)
            } else {
                serde_json::json!(v.to_string())
            }
        }
        serde_json::json!({
            "psnr_vs_clean": num(self.psnr_vs_clean),
            "warp_error": num(self.warp_error),
            "rain_residual": num(self.rain_residual),
            "per_frame_psnr": self.per_frame_psnr.iter().map(|&v| num(v)).collect::<Vec<_>>(),
            "per_pair_warp_error": self.per_pair_warp_error.iter().map(|&v| num(v)).collect::<Vec<_>>(),
            "per_frame_rain_residual": self.per_frame_rain_residual.iter().map(|&v| num(v)).collect::<Vec<_>>(),
        })
    }

    /// One row per frame; warp error of pair `f` is on row `f`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,psnr,warp_error,rain_residual\n");
        for (f, p) in self.per_frame_psnr.iter().enumerate() {
            let w = self
                .per_pair_warp_error
                .get(f)
                .map(|v| v.to_string())
                .unwrap_or_default();
            let r = self.per_frame_rain_residual.get(f).copied().unwrap_or(0.0);
            let _ = writeln!(out, "{f},{p},{w},{r}");
        }
        let _ = writeln!(
            out,
            "all,{},{},{}",
            self.psnr_vs_clean, self.warp_error, self.rain_residual
        );
        out
    }
}
