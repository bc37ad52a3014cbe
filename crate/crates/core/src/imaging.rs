//! Image containers and the low-level resampling and filtering primitives
//! shared by the matting, motion and skybox stages.
//!
//! All images store `f32` samples in row-major order. Pixel centers sit at
//! integer coordinates: pixel `(x, y)` is the sample at position `(x, y)`,
//! and bilinear resampling uses the align-corners convention, so the first
//! and last pixels of the source and destination line up exactly.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::motion::SimilarityTransform;

/// Common view over the planar containers so resampling can be written once.
pub trait Raster: Sized {
    const CHANNELS: usize;

    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn data(&self) -> &[f32];

    /// Builds an image from raw samples. The caller guarantees
    /// `data.len() == width * height * CHANNELS`.
    fn from_raw_parts(width: usize, height: usize, data: Vec<f32>) -> Self;
}

fn check_shape(width: usize, height: usize, len: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    if len != width * height * channels {
        return Err(Error::invalid(format!(
            "expected {} samples for a {width}x{height}x{channels} image, got {len}",
            width * height * channels
        )));
    }
    Ok(())
}

/// An RGB frame with channel-interleaved samples nominally in `[0, 1]`.
///
/// Intermediate results (the recolored foreground, for instance) may leave
/// the unit range; [`Frame::clamp`] restores it.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_shape(width, height, data.len(), 3)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "frame dimensions must be positive");
        let data = std::iter::repeat(rgb)
            .take(width * height)
            .flatten()
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "frame dimensions must be positive");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Converts 8-bit samples with `v / 255`.
    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    /// Converts back to 8 bits with `round(v * 255)`, clamped.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self.data.iter().map(|&v| to_u8(v)).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
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

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn clamp(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn clamped(mut self) -> Self {
        self.clamp();
        self
    }
}

impl Raster for Frame {
    const CHANNELS: usize = 3;

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
        debug_assert_eq!(data.len(), width * height * 3);
        Self {
            width,
            height,
            data,
        }
    }
}

pub(crate) fn to_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Single-channel image. Used for luminance, filter guidance and
/// intermediate filter results.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_shape(width, height, data.len(), 1)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
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

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn clamp(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Bilinear sample at a subpixel position, clamping to the border.
    #[inline]
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let max_x = (self.width - 1) as f32;
        let max_y = (self.height - 1) as f32;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        // Non-negative after the clamp, so truncation is floor.
        let x0 = x as usize;
        let y0 = y as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let row0 = y0 * self.width;
        let row1 = y1 * self.width;
        let top = lerp(self.data[row0 + x0], self.data[row0 + x1], fx);
        let bot = lerp(self.data[row1 + x0], self.data[row1 + x1], fx);
        lerp(top, bot, fy)
    }
}

impl Raster for GrayImage {
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

/// `a + (b - a) * t`, kept inside `[min(a, b), max(a, b)]`.
///
/// Exact when `t == 0` or `a == b`.
#[inline]
pub(crate) fn lerp(a: f32, b: f32, t: f32) -> f32 {
    let v = a + (b - a) * t;
    if a <= b {
        v.clamp(a, b)
    } else {
        v.clamp(b, a)
    }
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f32,
}

/// Align-corners source positions for every destination index.
fn align_corner_taps(in_dim: usize, out_dim: usize) -> Vec<Tap> {
    (0..out_dim)
        .map(|o| {
            let pos = if out_dim > 1 {
                (o as f64) * ((in_dim - 1) as f64) / ((out_dim - 1) as f64)
            } else {
                (in_dim - 1) as f64 / 2.0
            };
            let i0 = (pos.floor() as usize).min(in_dim - 1);
            let i1 = (i0 + 1).min(in_dim - 1);
            Tap {
                i0,
                i1,
                frac: (pos - i0 as f64) as f32,
            }
        })
        .collect()
}

/// Bilinear resize with the align-corners convention: destination index `o`
/// samples source position `o * (in - 1) / (out - 1)`; a destination of size
/// one samples the source center.
pub fn resize_bilinear<R: Raster>(src: &R, out_w: usize, out_h: usize) -> Result<R> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!(
            "resize target must be positive, got {out_w}x{out_h}"
        )));
    }
    let (in_w, in_h) = (src.width(), src.height());
    let ch = R::CHANNELS;
    if (in_w, in_h) == (out_w, out_h) {
        return Ok(R::from_raw_parts(out_w, out_h, src.data().to_vec()));
    }
    let xs = align_corner_taps(in_w, out_w);
    let ys = align_corner_taps(in_h, out_h);
    let data = src.data();
    let mut out = vec![0.0f32; out_w * out_h * ch];
    out.par_chunks_mut(out_w * ch)
        .zip(ys.par_iter())
        .for_each(|(row, ty)| {
            let r0 = &data[ty.i0 * in_w * ch..(ty.i0 + 1) * in_w * ch];
            let r1 = &data[ty.i1 * in_w * ch..(ty.i1 + 1) * in_w * ch];
            for (ox, tx) in xs.iter().enumerate() {
                for c in 0..ch {
                    let top = lerp(r0[tx.i0 * ch + c], r0[tx.i1 * ch + c], tx.frac);
                    let bot = lerp(r1[tx.i0 * ch + c], r1[tx.i1 * ch + c], tx.frac);
                    row[ox * ch + c] = lerp(top, bot, ty.frac);
                }
            }
        });
    Ok(R::from_raw_parts(out_w, out_h, out))
}

pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Rec. 601 luminance.
pub fn to_gray(src: &Frame) -> GrayImage {
    let data = src
        .data()
        .chunks_exact(3)
        .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
        .collect();
    GrayImage::from_raw_parts(src.width(), src.height(), data)
}

pub fn blue_channel(src: &Frame) -> GrayImage {
    let data = src.data().chunks_exact(3).map(|p| p[2]).collect();
    GrayImage::from_raw_parts(src.width(), src.height(), data)
}

/// Windowed mean over `[x-r, x+r] x [y-r, y+r]` clipped to the image, so the
/// window shrinks at the borders instead of padding with zeros.
///
/// Runs in O(1) per pixel using running sums.
pub fn box_filter(src: &GrayImage, radius: usize) -> GrayImage {
    if radius == 0 {
        return src.clone();
    }
    let wide: Vec<f64> = src.data().iter().map(|&v| f64::from(v)).collect();
    let mean = box_mean(&wide, src.width(), src.height(), radius);
    GrayImage::from_raw_parts(src.width(), src.height(), mean.into_iter().map(|v| v as f32).collect())
}

/// Shrink-window box mean of a single double-precision plane.
pub(crate) fn box_mean(src: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; width * height];
    box_mean_into(src, width, height, radius, &mut Vec::new(), &mut out);
    out
}

/// [`box_mean`] writing into `out`, with `scratch` reused across calls.
/// Large fresh buffers are surprisingly costly (page faults), so the guided
/// filter threads its buffers through here.
pub(crate) fn box_mean_into(
    src: &[f64],
    width: usize,
    height: usize,
    radius: usize,
    scratch: &mut Vec<f64>,
    out: &mut [f64],
) {
    debug_assert_eq!(src.len(), width * height);
    debug_assert_eq!(out.len(), width * height);

    // Horizontal running sums, four rows at a time so the add chains overlap.
    scratch.resize(width * height, 0.0);
    let horiz = &mut scratch[..];
    let lead = (radius + 1).min(width);
    horiz
        .par_chunks_mut(4 * width)
        .zip(src.par_chunks(4 * width))
        .for_each(|(out, rows)| {
            if rows.len() == 4 * width {
                let r: [&[f64]; 4] = std::array::from_fn(|k| &rows[k * width..(k + 1) * width]);
                let mut acc: [f64; 4] = std::array::from_fn(|k| r[k][..lead].iter().sum());
                for x in 0..width {
                    for k in 0..4 {
                        out[k * width + x] = acc[k];
                    }
                    if x + radius + 1 < width {
                        for k in 0..4 {
                            acc[k] += r[k][x + radius + 1];
                        }
                    }
                    if x >= radius {
                        for k in 0..4 {
                            acc[k] -= r[k][x - radius];
                        }
                    }
                }
                return;
            }
            for (out, row) in out.chunks_mut(width).zip(rows.chunks(width)) {
                let mut acc: f64 = row[..lead].iter().sum();
                for x in 0..width {
                    out[x] = acc;
                    if x + radius + 1 < width {
                        acc += row[x + radius + 1];
                    }
                    if x >= radius {
                        acc -= row[x - radius];
                    }
                }
            }
        });

    let counts = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(n - 1);
                (hi - lo + 1) as f64
            })
            .collect()
    };
    let cx = counts(width);
    let cy = counts(height);

    // Vertical running sums, one accumulator per column.
    let horiz = &scratch[..];
    let mut acc = vec![0.0f64; width];
    for y in 0..=radius.min(height - 1) {
        for (a, v) in acc.iter_mut().zip(&horiz[y * width..(y + 1) * width]) {
            *a += v;
        }
    }
    for y in 0..height {
        let row = &mut out[y * width..(y + 1) * width];
        for ((o, a), c) in row.iter_mut().zip(&acc).zip(&cx) {
            *o = a / (c * cy[y]);
        }
        if y + radius + 1 < height {
            let next = &horiz[(y + radius + 1) * width..(y + radius + 2) * width];
            for (a, v) in acc.iter_mut().zip(next) {
                *a += v;
            }
        }
        if y >= radius {
            let prev = &horiz[(y - radius) * width..(y - radius + 1) * width];
            for (a, v) in acc.iter_mut().zip(prev) {
                *a -= v;
            }
        }
    }
}

/// Smallest level side kept in a pyramid.
pub const MIN_PYRAMID_SIDE: usize = 16;

/// Gaussian pyramid; level 0 is the full-resolution image.
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    levels: Vec<GrayImage>,
}

impl ImagePyramid {
    pub fn levels(&self) -> &[GrayImage] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &GrayImage {
        &self.levels[k]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn base(&self) -> &GrayImage {
        &self.levels[0]
    }
}

const BINOMIAL5: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Smooths with the separable `[1 4 6 4 1] / 16` kernel (edge-replicated)
/// and keeps every second pixel.
fn pyr_down(src: &GrayImage) -> GrayImage {
    let (w, h) = src.dims();
    let (ow, oh) = (w / 2, h / 2);
    let data = src.data();
    let clamp_x = |x: isize| x.clamp(0, w as isize - 1) as usize;
    let clamp_y = |y: isize| y.clamp(0, h as isize - 1) as usize;

    // Horizontal pass only at the even columns that survive decimation.
    let mut horiz = vec![0.0f32; ow * h];
    horiz
        .par_chunks_mut(ow)
        .enumerate()
        .for_each(|(y, out)| {
            let row = &data[y * w..(y + 1) * w];
            for (ox, o) in out.iter_mut().enumerate() {
                let cx = (2 * ox) as isize;
                *o = BINOMIAL5
                    .iter()
                    .enumerate()
                    .map(|(k, wk)| wk * row[clamp_x(cx + k as isize - 2)])
                    .sum();
            }
        });

    let mut out = vec![0.0f32; ow * oh];
    out.par_chunks_mut(ow).enumerate().for_each(|(oy, row)| {
        let cy = (2 * oy) as isize;
        for (ox, o) in row.iter_mut().enumerate() {
            *o = BINOMIAL5
                .iter()
                .enumerate()
                .map(|(k, wk)| wk * horiz[clamp_y(cy + k as isize - 2) * ow + ox])
                .sum();
        }
    });
    GrayImage::from_raw_parts(ow, oh, out)
}

/// Builds up to `max_levels` levels, stopping before any level would drop
/// below 16 pixels on a side. Level 0 is always present.
pub fn build_pyramid(src: &GrayImage, max_levels: usize) -> Result<ImagePyramid> {
    if max_levels == 0 {
        return Err(Error::invalid("pyramid needs at least one level"));
    }
    let mut levels = vec![src.clone()];
    while levels.len() < max_levels {
        let last = levels.last().expect("non-empty");
        if last.width() / 2 < MIN_PYRAMID_SIDE || last.height() / 2 < MIN_PYRAMID_SIDE {
            break;
        }
        let next = pyr_down(last);
        levels.push(next);
    }
    Ok(ImagePyramid { levels })
}

/// `floor` via truncation; avoids a libm call on baseline x86-64.
#[inline]
fn fast_floor(v: f64) -> f64 {
    let t = v as i64 as f64;
    if t > v {
        t - 1.0
    } else {
        t
    }
}

#[inline]
fn wrap_coord(v: f64, n: usize, inv_n: f64) -> (usize, usize, f32) {
    // Cheaper than rem_euclid; the fix-ups catch rounding at the seams.
    let nf = n as f64;
    let mut v = v - fast_floor(v * inv_n) * nf;
    if v >= nf {
        v -= nf;
    } else if v < 0.0 {
        v += nf;
    }
    let i0 = (v as usize).min(n - 1);
    let i1 = if i0 + 1 == n { 0 } else { i0 + 1 };
    (i0, i1, (v - i0 as f64) as f32)
}

#[inline]
fn clamp_coord(v: f64, n: usize) -> (usize, usize, f32) {
    let v = v.clamp(0.0, (n - 1) as f64);
    let i0 = v as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, (v - i0 as f64) as f32)
}

/// Inverse-mapping warp: output pixel `p` takes the bilinear sample of `src`
/// at `transform^-1 * p`.
///
/// With `wrap` the source is treated as periodic (tiled) in both axes;
/// otherwise coordinates clamp to the border.
pub fn warp_similarity(
    src: &Frame,
    transform: &SimilarityTransform,
    out_w: usize,
    out_h: usize,
    wrap: bool,
) -> Result<Frame> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!(
            "warp target must be positive, got {out_w}x{out_h}"
        )));
    }
    let inv = transform.try_inverse()?;
    let m = inv.matrix();
    let (sw, sh) = src.dims();
    let data = src.data();
    let (inv_w, inv_h) = (1.0 / sw as f64, 1.0 / sh as f64);
    let mut out = vec![0.0f32; out_w * out_h * 3];
    let coord = |v: f64, n: usize, inv: f64| {
        if wrap {
            wrap_coord(v, n, inv)
        } else {
            clamp_coord(v, n)
        }
    };
    out.par_chunks_mut(out_w * 3)
        .enumerate()
        .for_each_init(
            || Vec::with_capacity(out_w),
            |taps: &mut Vec<(usize, usize, usize, usize, [f32; 4])>, (y, row)| {
                // Source offsets and weights first, then the gathers.
                let yf = y as f64;
                taps.clear();
                taps.extend((0..out_w).map(|x| {
                    let xf = x as f64;
                    let sx = m[0][0] * xf + m[0][1] * yf + m[0][2];
                    let sy = m[1][0] * xf + m[1][1] * yf + m[1][2];
                    let (x0, x1, fx) = coord(sx, sw, inv_w);
                    let (y0, y1, fy) = coord(sy, sh, inv_h);
                    let w = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
                    ((y0 * sw + x0) * 3, (y0 * sw + x1) * 3, (y1 * sw + x0) * 3, (y1 * sw + x1) * 3, w)
                }));
                for (px, &(i00, i10, i01, i11, w)) in row.chunks_exact_mut(3).zip(taps.iter()) {
                    let (p00, p10) = (&data[i00..i00 + 3], &data[i10..i10 + 3]);
                    let (p01, p11) = (&data[i01..i01 + 3], &data[i11..i11 + 3]);
                    for c in 0..3 {
                        px[c] = w[0] * p00[c] + w[1] * p10[c] + w[2] * p01[c] + w[3] * p11[c];
                    }
                }
            },
        );
    Ok(Frame::from_raw_parts(out_w, out_h, out))
}
