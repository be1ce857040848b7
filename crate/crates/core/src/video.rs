//! Real-valued video blocks laid out as `frames × channels × height × width`.
//!
//! The same layout carries pixel-space videos (values in `[0, 1]`) and
//! latents (values in `[-1, 1]`); [`pixels_to_latent`] and
//! [`latent_to_pixels`] convert between the two. There is no learned
//! autoencoder: a latent is the affinely rescaled pixel block.

use std::io::Write;
use std::path::Path;

use ndarray::{Array4, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VideoShape {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl VideoShape {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            channels,
            height,
            width,
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn len(&self) -> usize {
        self.frames * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo(Array4<f64>);

impl LatentVideo {
    pub fn zeros(shape: VideoShape) -> Self {
        Self(Array4::zeros(shape.dims()))
    }

    pub fn filled(shape: VideoShape, value: f64) -> Self {
        Self(Array4::from_elem(shape.dims(), value))
    }

    pub fn from_array(data: Array4<f64>) -> Self {
        Self(data)
    }

    pub fn from_vec(shape: VideoShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape {
                expected: shape.dims().to_vec(),
                got: vec![data.len()],
            });
        }
        let arr = Array4::from_shape_vec(shape.dims(), data)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(Self(arr))
    }

    /// Standard normal draws in row-major order.
    pub fn randn<R: Rng + ?Sized>(shape: VideoShape, rng: &mut R) -> Self {
        let data = (0..shape.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self(Array4::from_shape_vec(shape.dims(), data).expect("length matches shape"))
    }

    pub fn shape(&self) -> VideoShape {
        let d = self.0.dim();
        VideoShape::new(d.0, d.1, d.2, d.3)
    }

    pub fn array(&self) -> &Array4<f64> {
        &self.0
    }

    pub fn array_mut(&mut self) -> &mut Array4<f64> {
        &mut self.0
    }

    pub fn into_array(self) -> Array4<f64> {
        self.0
    }

    /// Row-major element slice.
    pub fn as_slice(&self) -> &[f64] {
        self.0
            .as_slice()
            .expect("latent videos are always standard layout")
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }

    pub fn ensure_same_shape(&self, other: &LatentVideo) -> Result<()> {
        check_shape(&self.shape().dims(), &other.shape().dims())
    }

    /// `a·self + b·other`, elementwise.
    pub fn lin_comb(&self, a: f64, other: &LatentVideo, b: f64) -> Result<LatentVideo> {
        self.ensure_same_shape(other)?;
        let mut out = Array4::zeros(self.0.raw_dim());
        Zip::from(&mut out)
            .and(&self.0)
            .and(&other.0)
            .for_each(|o, &x, &y| *o = a * x + b * y);
        Ok(Self(out))
    }

    pub fn sub(&self, other: &LatentVideo) -> Result<LatentVideo> {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn scale(&self, a: f64) -> LatentVideo {
        Self(self.0.mapv(|x| a * x))
    }

    pub fn max_abs_diff(&self, other: &LatentVideo) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .0
            .iter()
            .zip(other.0.iter())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn l2_distance(&self, other: &LatentVideo) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn mean_square(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().map(|x| x * x).sum::<f64>() / self.0.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// True when every element has the same bit pattern.
    pub fn bit_eq(&self, other: &LatentVideo) -> bool {
        self.shape() == other.shape()
            && self
                .0
                .iter()
                .zip(other.0.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> LatentVideo {
        Self(self.0.mapv(|x| x.clamp(lo, hi)))
    }
}

/// `[0, 1]` pixels to `[-1, 1]` latents.
pub fn pixels_to_latent(pixels: &LatentVideo) -> LatentVideo {
    LatentVideo(pixels.0.mapv(|x| 2.0 * x - 1.0))
}

/// `[-1, 1]` latents to pixels, clamped to `[0, 1]`.
pub fn latent_to_pixels(latent: &LatentVideo) -> LatentVideo {
    LatentVideo(latent.0.mapv(|x| ((x + 1.0) * 0.5).clamp(0.0, 1.0)))
}

/// Quantizes a `[0, 1]` pixel video to 8-bit levels, returned as floats in
/// `[0, 255]`.
pub fn quantize_8bit(pixels: &LatentVideo) -> LatentVideo {
    LatentVideo(pixels.0.mapv(|x| (x.clamp(0.0, 1.0) * 255.0).round()))
}

/// Writes frame `f` of a `[0, 1]` pixel video as binary PPM (P6).
///
/// Single-channel videos are replicated to gray RGB; videos with more than
/// three channels keep the first three.
pub fn write_ppm(pixels: &LatentVideo, frame: usize, path: &Path) -> Result<()> {
    let bytes = encode_ppm(pixels, frame)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn encode_ppm(pixels: &LatentVideo, frame: usize) -> Result<Vec<u8>> {
    let s = pixels.shape();
    if frame >= s.frames {
        return Err(Error::InvalidArgument(format!(
            "frame {frame} out of range for {} frames",
            s.frames
        )));
    }
    if s.channels == 0 {
        return Err(Error::InvalidArgument("video has no channels".into()));
    }
    let mut out = format!("P6\n{} {}\n255\n", s.width, s.height).into_bytes();
    out.reserve(s.width * s.height * 3);
    let a = pixels.array();
    for y in 0..s.height {
        for x in 0..s.width {
            for c in 0..3 {
                let ch = if s.channels >= 3 { c } else { 0 };
                let v = (a[[frame, ch, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8;
                out.push(v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_pixel_round_trip() {
        let s = VideoShape::new(2, 3, 4, 4);
        let px = LatentVideo::filled(s, 0.25);
        let lat = pixels_to_latent(&px);
        assert!(lat.as_slice().iter().all(|&x| x == -0.5));
        assert_eq!(latent_to_pixels(&lat), px);
    }

    #[test]
    fn ppm_header_and_payload() {
        let s = VideoShape::new(1, 1, 2, 3);
        let px = LatentVideo::filled(s, 1.0);
        let bytes = encode_ppm(&px, 0).unwrap();
        let header = b"P6\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 2 * 3 * 3);
        assert!(bytes[header.len()..].iter().all(|&b| b == 255));
        assert!(encode_ppm(&px, 1).is_err());
    }

    #[test]
    fn lin_comb_rejects_mismatch() {
        let a = LatentVideo::zeros(VideoShape::new(1, 1, 2, 2));
        let b = LatentVideo::zeros(VideoShape::new(1, 1, 2, 3));
        assert!(matches!(a.lin_comb(1.0, &b, 1.0), Err(Error::Shape { .. })));
    }
}
