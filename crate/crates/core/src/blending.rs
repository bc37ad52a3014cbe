//! Harmonized compositing: recolor and relight the foreground toward the
//! new sky, blend through the matte, then screen in weather layers.

use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, Frame};
use crate::matting::Matte;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonizationParams {
    /// Recoloring strength.
    pub alpha: f64,
    /// Relighting gain.
    pub beta: f64,
    /// Matte value at or above which a pixel counts as sky when computing
    /// region statistics.
    pub sky_region_threshold: f32,
}

impl Default for HarmonizationParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 1.0,
            sky_region_threshold: 0.5,
        }
    }
}

impl HarmonizationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.sky_region_threshold > 0.0 && self.sky_region_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "sky region threshold must lie in (0, 1), got {}",
                self.sky_region_threshold
            )));
        }
        Ok(())
    }
}

pub type Rgb = [f64; 3];

/// Per-channel color statistics that drive recoloring and relighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMeans {
    /// Mean of the frame over non-sky pixels (`A < threshold`).
    pub foreground: Rgb,
    /// Mean of the sky background over sky pixels (`A >= threshold`).
    pub sky_background: Rgb,
    /// Mean of the frame over all pixels.
    pub frame: Rgb,
}

fn mean_rgb(data: &[f32]) -> Rgb {
    let mut acc = [0.0f64; 3];
    for p in data.chunks_exact(3) {
        for c in 0..3 {
            acc[c] += f64::from(p[c]);
        }
    }
    let n = (data.len() / 3) as f64;
    acc.map(|v| v / n)
}

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::mismatch(a, b));
    }
    Ok(())
}

/// Empty regions fall back to the global mean of the corresponding image.
pub fn region_means(frame: &Frame, background: &Frame, matte: &Matte, threshold: f32) -> Result<RegionMeans> {
    check_dims(frame.dims(), background.dims())?;
    check_dims(frame.dims(), matte.dims())?;
    let mut fg = [0.0f64; 3];
    let mut sky = [0.0f64; 3];
    let (mut n_fg, mut n_sky) = (0usize, 0usize);
    for ((i, b), &a) in frame
        .data()
        .chunks_exact(3)
        .zip(background.data().chunks_exact(3))
        .zip(matte.data())
    {
        if a >= threshold {
            n_sky += 1;
            for c in 0..3 {
                sky[c] += f64::from(b[c]);
            }
        } else {
            n_fg += 1;
            for c in 0..3 {
                fg[c] += f64::from(i[c]);
            }
        }
    }
    let frame_mean = mean_rgb(frame.data());
    let foreground = if n_fg == 0 {
        frame_mean
    } else {
        fg.map(|v| v / n_fg as f64)
    };
    let sky_background = if n_sky == 0 {
        mean_rgb(background.data())
    } else {
        sky.map(|v| v / n_sky as f64)
    };
    Ok(RegionMeans {
        foreground,
        sky_background,
        frame: frame_mean,
    })
}

/// `I + alpha * (mu_sky_background - mu_foreground)` per channel. Not clamped.
pub fn recolor(frame: &Frame, means: &RegionMeans, alpha: f64) -> Frame {
    let shift: [f32; 3] =
        std::array::from_fn(|c| (alpha * (means.sky_background[c] - means.foreground[c])) as f32);
    let mut out = frame.clone();
    for p in out.data_mut().chunks_exact_mut(3) {
        for c in 0..3 {
            p[c] += shift[c];
        }
    }
    out
}

/// `beta * (I_hat + mu_I - mean(I_hat))` per channel, clamped to `[0, 1]`.
pub fn relight(recolored: &Frame, frame_mean: &Rgb, beta: f64) -> Frame {
    let recolored_mean = mean_rgb(recolored.data());
    let shift: [f32; 3] = std::array::from_fn(|c| (frame_mean[c] - recolored_mean[c]) as f32);
    let beta = beta as f32;
    let mut out = recolored.clone();
    for p in out.data_mut().chunks_exact_mut(3) {
        for c in 0..3 {
            p[c] = (beta * (p[c] + shift[c])).clamp(0.0, 1.0);
        }
    }
    out
}

/// `(1 - A) * I + A * B` per pixel and channel.
pub fn alpha_blend(frame: &Frame, background: &Frame, matte: &Matte) -> Result<Frame> {
    check_dims(frame.dims(), background.dims())?;
    check_dims(frame.dims(), matte.dims())?;
    let mut out = frame.clone();
    for ((o, b), &a) in out
        .data_mut()
        .chunks_exact_mut(3)
        .zip(background.data().chunks_exact(3))
        .zip(matte.data())
    {
        for c in 0..3 {
            o[c] = (1.0 - a) * o[c] + a * b[c];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeatherKind {
    Rain,
    Haze,
}

/// A layer screened over the composite; sequences cycle with the frame index.
#[derive(Debug, Clone)]
pub struct WeatherLayer {
    pub kind: WeatherKind,
    frames: Vec<Frame>,
    pub opacity: f32,
}

/// Gray level of the default haze layer.
pub const DEFAULT_HAZE_LEVEL: f32 = 0.8;

impl WeatherLayer {
    pub fn new(kind: WeatherKind, frames: Vec<Frame>, opacity: f32) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("weather layer needs at least one frame"));
        }
        if !(0.0..=1.0).contains(&opacity) {
            return Err(Error::invalid(format!(
                "layer opacity must lie in [0, 1], got {opacity}"
            )));
        }
        Ok(Self {
            kind,
            frames,
            opacity,
        })
    }

    /// Constant light-gray layer of the given size.
    pub fn haze(width: usize, height: usize, level: f32, opacity: f32) -> Result<Self> {
        Self::new(
            WeatherKind::Haze,
            vec![Frame::filled(width, height, [level; 3])],
            opacity,
        )
    }

    pub fn rain(frames: Vec<Frame>, opacity: f32) -> Result<Self> {
        Self::new(WeatherKind::Rain, frames, opacity)
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_for(&self, frame_index: usize) -> &Frame {
        &self.frames[frame_index % self.frames.len()]
    }

    /// Resizes every frame once so per-frame blending skips the resize.
    pub fn fit_to(&mut self, width: usize, height: usize) -> Result<()> {
        for f in &mut self.frames {
            if f.dims() != (width, height) {
                *f = resize_bilinear(f, width, height)?;
            }
        }
        Ok(())
    }
}

/// Screen blend: `1 - (1 - base) * (1 - opacity * layer)` per channel.
///
/// Evaluated as `base + l * (1 - base)` with `l = opacity * layer`, which is
/// exact for `l == 0` (returns `base`) and `l == 1` (returns 1).
pub fn screen_blend(base: &Frame, layer: &WeatherLayer, frame_index: usize) -> Result<Frame> {
    let src = layer.frame_for(frame_index);
    let resized;
    let src = if src.dims() == base.dims() {
        src
    } else {
        resized = resize_bilinear(src, base.width(), base.height())?;
        &resized
    };
    let mut out = base.clone();
    for (o, &l) in out.data_mut().iter_mut().zip(src.data()) {
        let l = layer.opacity * l;
        *o += l * (1.0 - *o);
    }
    Ok(out)
}

/// Full harmonization: region means, recolor, relight, matte blend, then
/// each weather layer in order, with a final clamp.
pub fn harmonize_and_compose(
    frame: &Frame,
    background: &Frame,
    matte: &Matte,
    params: &HarmonizationParams,
    layers: &[WeatherLayer],
    frame_index: usize,
) -> Result<Frame> {
    let means = region_means(frame, background, matte, params.sky_region_threshold)?;
    let recolored = recolor(frame, &means, params.alpha);
    let relit = relight(&recolored, &means.frame, params.beta);
    let mut out = alpha_blend(&relit, background, matte)?;
    for layer in layers {
        out = screen_blend(&out, layer, frame_index)?;
    }
    out.clamp();
    Ok(out)
}
