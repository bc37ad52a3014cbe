//! Soft sky matte: a coarse estimate at low resolution, refined to full
//! resolution with a guided filter steered by the frame's blue channel.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{blue_channel, box_mean_into, resize_bilinear, to_gray, Frame, GrayImage, Raster};

/// Per-pixel sky opacity in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matte {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Matte {
    /// Values are clamped into `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        GrayImage::new(width, height, data).map(Self::from_gray)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::from_gray(GrayImage::filled(width, height, value))
    }

    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> f32) -> Self {
        Self::from_gray(GrayImage::from_fn(width, height, f))
    }

    /// Clamps into `[0, 1]`.
    pub fn from_gray(gray: GrayImage) -> Self {
        let (width, height) = gray.dims();
        let data = gray
            .into_data()
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_raw_parts(self.width, self.height, self.data.clone())
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        let raw = self.data.iter().map(|&v| crate::imaging::to_u8(v)).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }
}

impl Raster for Matte {
    const CHANNELS: usize = 1;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn data(&self) -> &[f32] {
        &self.data
    }
    fn from_raw_parts(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidedFilterParams {
    pub radius: usize,
    pub epsilon: f64,
}

impl Default for GuidedFilterParams {
    fn default() -> Self {
        Self {
            radius: 20,
            epsilon: 0.01,
        }
    }
}

impl GuidedFilterParams {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(Error::invalid("guided filter radius must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "guided filter epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Weights of the logistic sky score used by [`estimate_coarse_matte`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseMatteWeights {
    pub blueness: f64,
    pub smoothness: f64,
    pub height: f64,
    pub bias: f64,
}

impl Default for CoarseMatteWeights {
    fn default() -> Self {
        Self {
            blueness: 4.0,
            smoothness: 2.0,
            height: 2.0,
            bias: -1.5,
        }
    }
}

/// Longest side of the low-resolution frame fed to the coarse matte source.
pub const DEFAULT_MATTE_LONG_SIDE: usize = 384;

/// Downsamples (bilinear) so the longest side is at most `long_side`,
/// preserving aspect ratio. Smaller frames are returned unchanged.
pub fn downsample_for_matting(frame: &Frame, long_side: usize) -> Result<Frame> {
    let (w, h) = frame.dims();
    let longest = w.max(h);
    if longest <= long_side {
        return Ok(frame.clone());
    }
    let s = long_side as f64 / longest as f64;
    let ow = ((w as f64 * s).round() as usize).max(1);
    let oh = ((h as f64 * s).round() as usize).max(1);
    resize_bilinear(frame, ow, oh)
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Sobel gradient magnitude of the luminance, edge-replicated and clamped
/// to `[0, 1]` (a unit step reads as 4 before clamping).
fn gradient_magnitude(gray: &GrayImage) -> Vec<f64> {
    let (w, h) = gray.dims();
    let d = gray.data();
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        f64::from(d[y * w + x])
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1);
            let gy = at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1);
            out.push(gx.hypot(gy).min(1.0));
        }
    }
    out
}

/// Heuristic stand-in for a learned sky segmenter.
///
/// Score per pixel:
/// `logistic(w_b * (B - max(R, G)) + w_g * (1 - |grad|) + w_y * (1 - y / height) + bias)`,
/// where `|grad|` is the clamped Sobel magnitude of the luminance.
pub fn estimate_coarse_matte(frame_low: &Frame, weights: &CoarseMatteWeights) -> Matte {
    let (w, h) = frame_low.dims();
    let grad = gradient_magnitude(&to_gray(frame_low));
    let data = frame_low
        .data()
        .chunks_exact(3)
        .zip(&grad)
        .enumerate()
        .map(|(i, (p, &g))| {
            let y = (i / w) as f64;
            let blueness = f64::from(p[2]) - f64::from(p[0].max(p[1]));
            let score = weights.blueness * blueness
                + weights.smoothness * (1.0 - g)
                + weights.height * (1.0 - y / h as f64)
                + weights.bias;
            logistic(score) as f32
        })
        .collect();
    Matte::from_raw_parts(w, h, data)
}

/// Where coarse mattes come from.
#[derive(Debug, Clone, PartialEq)]
pub enum MatteSource {
    Heuristic(CoarseMatteWeights),
    /// Precomputed single-channel matte images, one per frame, named by
    /// expanding `pattern` (printf-style `%d` / `%0Nd`) with the frame index.
    FileSequence { dir: PathBuf, pattern: String },
}

impl Default for MatteSource {
    fn default() -> Self {
        MatteSource::Heuristic(CoarseMatteWeights::default())
    }
}

impl MatteSource {
    /// Coarse matte for `frame_index` at the size of `frame_low`.
    pub fn coarse_matte(&self, frame_index: usize, frame_low: &Frame) -> Result<Matte> {
        match self {
            MatteSource::Heuristic(weights) => Ok(estimate_coarse_matte(frame_low, weights)),
            MatteSource::FileSequence { .. } => {
                load_matte(self, frame_index, frame_low.width(), frame_low.height())
            }
        }
    }
}

/// Expands the first `%d` or `%0Nd` in `pattern` with `index`. Returns the
/// expanded string and the formatted index.
pub fn expand_index_pattern(pattern: &str, index: usize) -> Result<(String, String)> {
    let start = pattern
        .find('%')
        .ok_or_else(|| Error::invalid(format!("pattern {pattern:?} has no %d placeholder")))?;
    let rest = &pattern[start + 1..];
    let end = rest
        .find('d')
        .ok_or_else(|| Error::invalid(format!("pattern {pattern:?} has no %d placeholder")))?;
    let spec = &rest[..end];
    let formatted = if spec.is_empty() {
        index.to_string()
    } else {
        let width: usize = spec
            .strip_prefix('0')
            .unwrap_or(spec)
            .parse()
            .map_err(|_| Error::invalid(format!("bad placeholder %{spec}d in {pattern:?}")))?;
        if spec.starts_with('0') {
            format!("{index:0width$}")
        } else {
            format!("{index:width$}")
        }
    };
    let expanded = format!("{}{}{}", &pattern[..start], formatted, &rest[end + 1..]);
    Ok((expanded, formatted))
}

fn decode_matte(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        image::DynamicImage::ImageLuma8(buf) => {
            buf.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect()
        }
        image::DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| f32::from(v) / 65535.0)
            .collect(),
        other => {
            return Err(Error::ChannelCount {
                path: path.to_path_buf(),
                channels: other.color().channel_count(),
            })
        }
    };
    GrayImage::new(w, h, data)
}

/// Reads the matte for `frame_index` from a file-sequence source, scaled to
/// `[0, 1]` and resized bilinearly to `expected_w x expected_h` if needed.
pub fn load_matte(
    source: &MatteSource,
    frame_index: usize,
    expected_w: usize,
    expected_h: usize,
) -> Result<Matte> {
    let MatteSource::FileSequence { dir, pattern } = source else {
        return Err(Error::invalid("load_matte needs a file-sequence matte source"));
    };
    let (name, index) = expand_index_pattern(pattern, frame_index)?;
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::MissingMatte { index, path });
    }
    let gray = decode_matte(&path)?;
    let gray = if gray.dims() == (expected_w, expected_h) {
        gray
    } else {
        resize_bilinear(&gray, expected_w, expected_h)?
    };
    Ok(Matte::from_gray(gray))
}

/// Single-channel guided filter.
///
/// With windowed means over radius `r` (shrinking at borders):
/// `a = cov(I, p) / (var(I) + eps)`, `b = mean(p) - a * mean(I)`,
/// `q = mean(a) * I + mean(b)`. The output is not clamped.
pub fn guided_filter(
    guide: &GrayImage,
    src: &GrayImage,
    params: &GuidedFilterParams,
) -> Result<GrayImage> {
    if guide.dims() != src.dims() {
        return Err(Error::mismatch(guide.dims(), src.dims()));
    }
    params.validate()?;
    let (w, h) = guide.dims();
    let r = params.radius;
    let n = w * h;
    let i: Vec<f64> = guide.data().iter().map(|&v| f64::from(v)).collect();
    let p: Vec<f64> = src.data().iter().map(|&v| f64::from(v)).collect();
    let mut scratch = Vec::with_capacity(n);
    let mut tmp: Vec<f64> = i.iter().zip(&p).map(|(a, b)| a * b).collect();
    let mut mean_i = vec![0.0f64; n];
    let mut mean_p = vec![0.0f64; n];
    let mut corr_ip = vec![0.0f64; n];
    let mut corr_ii = vec![0.0f64; n];
    box_mean_into(&tmp, w, h, r, &mut scratch, &mut corr_ip);
    for (t, v) in tmp.iter_mut().zip(&i) {
        *t = v * v;
    }
    box_mean_into(&tmp, w, h, r, &mut scratch, &mut corr_ii);
    box_mean_into(&i, w, h, r, &mut scratch, &mut mean_i);
    box_mean_into(&p, w, h, r, &mut scratch, &mut mean_p);

    // a lands in corr_ip and b in corr_ii.
    for k in 0..n {
        let var = corr_ii[k] - mean_i[k] * mean_i[k];
        let cov = corr_ip[k] - mean_i[k] * mean_p[k];
        let a = cov / (var + params.epsilon);
        corr_ip[k] = a;
        corr_ii[k] = mean_p[k] - a * mean_i[k];
    }
    let (mean_a, mean_b) = (&mut mean_i, &mut mean_p);
    box_mean_into(&corr_ip, w, h, r, &mut scratch, mean_a);
    box_mean_into(&corr_ii, w, h, r, &mut scratch, mean_b);
    let out = mean_a
        .iter()
        .zip(mean_b.iter())
        .zip(&i)
        .map(|((ma, mb), i)| (ma * i + mb) as f32)
        .collect();
    Ok(GrayImage::from_raw_parts(w, h, out))
}

/// Upsamples `coarse` to the frame size, filters it with the frame's blue
/// channel as guide and clamps to `[0, 1]`.
pub fn refine_matte(
    coarse: &Matte,
    frame_full: &Frame,
    params: &GuidedFilterParams,
) -> Result<Matte> {
    let (w, h) = frame_full.dims();
    let up = resize_bilinear(coarse, w, h)?;
    let guide = blue_channel(frame_full);
    let filtered = guided_filter(&guide, &up.to_gray(), params)?;
    Ok(Matte::from_gray(filtered))
}
