#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skyblendr::imaging::{Frame, GrayImage};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Box–Muller normal sample.
pub fn normal<R: Rng>(r: &mut R, sigma: f64) -> f64 {
    let u1: f64 = r.gen_range(f64::EPSILON..1.0);
    let u2: f64 = r.gen();
    sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn random_gray(w: usize, h: usize, seed: u64) -> GrayImage {
    let mut r = rng(seed);
    GrayImage::from_fn(w, h, |_, _| r.gen::<f32>())
}

/// Smooth texture built from a few sinusoids; trackable by LK at every
/// pyramid level. `shift` translates the pattern along x.
pub fn blob_value(x: f64, y: f64) -> f64 {
    0.5 + 0.18 * (x * 0.21).sin() * (y * 0.17).cos()
        + 0.12 * (x * 0.09 + y * 0.13).sin()
        + 0.08 * ((x - y) * 0.31).cos()
        + 0.06 * (x * 0.043 - y * 0.057).sin()
}

pub fn blob_gray(w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| blob_value(x as f64, y as f64) as f32)
}

pub fn gray_to_frame(g: &GrayImage) -> Frame {
    Frame::from_fn(g.width(), g.height(), |x, y| {
        let v = g.get(x, y);
        [v, v, v]
    })
}

/// Naive windowed mean with explicit loops and a shrinking window.
pub fn naive_box(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
            let mut s = 0.0;
            let mut n = 0.0;
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    s += src[yy * w + xx];
                    n += 1.0;
                }
            }
            out[y * w + x] = s / n;
        }
    }
    out
}

/// Guided filter computed from windowed statistics gathered pixel by pixel
/// (no running sums, no shared box routine).
pub fn naive_guided(guide: &GrayImage, src: &GrayImage, r: usize, eps: f64) -> Vec<f64> {
    let (w, h) = guide.dims();
    let i: Vec<f64> = guide.data().iter().map(|&v| v as f64).collect();
    let p: Vec<f64> = src.data().iter().map(|&v| v as f64).collect();
    let mut a = vec![0.0; w * h];
    let mut b = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
            let (mut si, mut sp, mut sip, mut sii, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    let k = yy * w + xx;
                    si += i[k];
                    sp += p[k];
                    sip += i[k] * p[k];
                    sii += i[k] * i[k];
                    n += 1.0;
                }
            }
            let (mi, mp) = (si / n, sp / n);
            let var = sii / n - mi * mi;
            let cov = sip / n - mi * mp;
            let k = y * w + x;
            a[k] = cov / (var + eps);
            b[k] = mp - a[k] * mi;
        }
    }
    let ma = naive_box(&a, w, h, r);
    let mb = naive_box(&b, w, h, r);
    (0..w * h).map(|k| ma[k] * i[k] + mb[k]).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - *y as f64).abs())
        .fold(0.0, f64::max)
}

/// Periodic texture: sinusoids whose periods divide `w` and `h`.
pub fn tileable_sky(w: usize, h: usize) -> Frame {
    use std::f64::consts::TAU;
    Frame::from_fn(w, h, |x, y| {
        let u = x as f64 / w as f64;
        let v = y as f64 / h as f64;
        let cloud = 0.5
            + 0.25 * (TAU * 3.0 * u).sin() * (TAU * 2.0 * v).cos()
            + 0.15 * (TAU * (5.0 * u + 3.0 * v)).sin();
        let c = cloud.clamp(0.0, 1.0) as f32;
        [0.35 + 0.5 * c, 0.55 + 0.4 * c, 0.85 + 0.15 * c]
    })
}

pub fn psnr(a: &Frame, b: &Frame) -> f64 {
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Synthetic pan: a textured sky band above a static textured foreground.
/// The sky content moves by `speed` px per frame along +x.
pub struct PanScene {
    pub width: usize,
    pub height: usize,
    pub horizon: f64,
    pub speed: f64,
}

impl PanScene {
    /// Soft analytic matte: 1 above the horizon, 0 below, a 4 px ramp between.
    pub fn matte_value(&self, y: f64) -> f32 {
        ((self.horizon - y) / 4.0 + 0.5).clamp(0.0, 1.0) as f32
    }

    pub fn frame(&self, t: usize) -> Frame {
        let shift = self.speed * t as f64;
        Frame::from_fn(self.width, self.height, |x, y| {
            let a = self.matte_value(y as f64);
            let s = blob_value(x as f64 - shift, y as f64) as f32;
            let sky = [0.45 + 0.4 * (s - 0.5), 0.6 + 0.4 * (s - 0.5), 0.9 + 0.2 * (s - 0.5)];
            let g = blob_value(x as f64 * 1.7 + 300.0, y as f64 * 1.3) as f32;
            let ground = [0.35 * g, 0.3 * g, 0.12 * g];
            std::array::from_fn(|c| (a * sky[c] + (1.0 - a) * ground[c]).clamp(0.0, 1.0))
        })
    }
}

/// Writes `frames` as `frame_000000.png`, ... into `dir`.
pub fn write_sequence(dir: &std::path::Path, frames: &[Frame]) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, f) in frames.iter().enumerate() {
        f.to_rgb8().save(dir.join(format!("frame_{i:06}.png"))).unwrap();
    }
}

pub fn write_template(path: &std::path::Path, frame: &Frame) {
    frame.to_rgb8().save(path).unwrap();
}
