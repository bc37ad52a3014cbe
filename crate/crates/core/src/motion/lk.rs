// Pyramidal Lucas-Kanade, following Bouguet's coarse-to-fine formulation:
// the flow guess from level L+1 is doubled and refined at level L.

use rayon::prelude::*;

use super::{FeaturePoint, MotionParams, PointMatch};
use crate::imaging::{lerp, GrayImage, ImagePyramid};

/// Points whose normal matrix has a smaller minimum eigenvalue (averaged
/// over the window pixels) are dropped.
pub const MIN_EIGEN_THRESHOLD: f64 = 1e-4;

/// Puts [0,1]-intensity gradients on the scale the threshold is usually
/// quoted in: 8-bit Scharr derivatives (32 x 255 per unit) times 2^-20.
const EIGEN_SCALE: f64 = (32.0 * 255.0) * (32.0 * 255.0) / (1u64 << 20) as f64;

/// Bilinear samples of the `(2 * half + 1)`-square window centred on
/// `(cx, cy)`, row-major into `out`. All samples share one fractional
/// offset, so interior windows skip the per-sample clamping.
fn sample_window(img: &GrayImage, cx: f64, cy: f64, half: isize, out: &mut [f32]) {
    let (w, h) = img.dims();
    let side = (2 * half + 1) as usize;
    let (left, top) = (cx - half as f64, cy - half as f64);
    let inside = left >= 0.0
        && top >= 0.0
        && left + side as f64 <= (w - 1) as f64
        && top + side as f64 <= (h - 1) as f64;
    if !inside {
        // Same arithmetic as `GrayImage::sample`, with the per-axis terms
        // computed once per column and row.
        let axis = |c: f64, n: usize| -> Vec<(usize, usize, f32)> {
            (-half..=half)
                .map(|d| {
                    let v = ((c + d as f64) as f32).clamp(0.0, (n - 1) as f32);
                    let i0 = v as usize;
                    (i0, (i0 + 1).min(n - 1), v - i0 as f32)
                })
                .collect()
        };
        let (xs, ys) = (axis(cx, w), axis(cy, h));
        let d = img.data();
        for (row_out, &(y0, y1, fy)) in out.chunks_exact_mut(side).zip(&ys) {
            let (r0, r1) = (&d[y0 * w..(y0 + 1) * w], &d[y1 * w..(y1 + 1) * w]);
            for (o, &(x0, x1, fx)) in row_out.iter_mut().zip(&xs) {
                *o = lerp(lerp(r0[x0], r0[x1], fx), lerp(r1[x0], r1[x1], fx), fy);
            }
        }
        return;
    }
    let (x0, y0) = (left.floor() as usize, top.floor() as usize);
    let fx = (left - x0 as f64) as f32;
    let fy = (top - y0 as f64) as f32;
    let d = img.data();
    for (j, row_out) in out.chunks_exact_mut(side).take(side).enumerate() {
        let r0 = &d[(y0 + j) * w + x0..][..side + 1];
        let r1 = &d[(y0 + j + 1) * w + x0..][..side + 1];
        for (i, o) in row_out.iter_mut().enumerate() {
            let t = r0[i] + (r0[i + 1] - r0[i]) * fx;
            let b = r1[i] + (r1[i + 1] - r1[i]) * fx;
            *o = t + (b - t) * fy;
        }
    }
}

fn track_point(
    prev: &ImagePyramid,
    curr: &ImagePyramid,
    start: (f64, f64),
    params: &MotionParams,
) -> Option<PointMatch> {
    let levels = prev.len().min(curr.len());
    let half = (params.lk_window / 2) as isize;
    let side = 2 * half as usize + 1;
    let n = side * side;
    let mut patch = vec![0.0f32; n];
    let mut pgx = vec![0.0f32; n];
    let mut pgy = vec![0.0f32; n];
    let mut warped = vec![0.0f32; n];
    let wide_side = side + 2;
    let mut wide = vec![0.0f32; wide_side * wide_side];

    let mut guess = (0.0f64, 0.0f64);
    let mut flow = (0.0f64, 0.0f64);
    for level in (0..levels).rev() {
        let scale = (1u32 << level) as f64;
        let (px, py) = (start.0 / scale, start.1 / scale);
        let img = prev.level(level);

        // One sample pass over a window 1 px wider on each side; central
        // differences of the interpolated patch give the gradients.
        sample_window(img, px, py, half + 1, &mut wide);
        for j in 0..side {
            let r = (j + 1) * wide_side;
            for i in 0..side {
                let c = r + i + 1;
                let k = j * side + i;
                patch[k] = wide[c];
                pgx[k] = 0.5 * (wide[c + 1] - wide[c - 1]);
                pgy[k] = 0.5 * (wide[c + wide_side] - wide[c - wide_side]);
            }
        }
        // Row partials in f32, totals in f64.
        let (mut gxx, mut gxy, mut gyy) = (0.0f64, 0.0f64, 0.0f64);
        for (rx, ry) in pgx.chunks_exact(side).zip(pgy.chunks_exact(side)) {
            let (mut a, mut b, mut c) = (0.0f32, 0.0f32, 0.0f32);
            for (&ix, &iy) in rx.iter().zip(ry) {
                a += ix * ix;
                b += ix * iy;
                c += iy * iy;
            }
            gxx += f64::from(a);
            gxy += f64::from(b);
            gyy += f64::from(c);
        }
        let det = gxx * gyy - gxy * gxy;
        let half_trace = 0.5 * (gxx + gyy);
        let min_eig = half_trace - (0.25 * (gxx - gyy).powi(2) + gxy * gxy).sqrt();
        if EIGEN_SCALE * min_eig / (n as f64) < MIN_EIGEN_THRESHOLD || det <= 0.0 {
            return None;
        }

        let target = curr.level(level);
        let mut v = (0.0f64, 0.0f64);
        for _ in 0..params.lk_iterations {
            let ox = px + guess.0 + v.0;
            let oy = py + guess.1 + v.1;
            sample_window(target, ox, oy, half, &mut warped);
            let (mut bx, mut by) = (0.0f64, 0.0f64);
            for (((p, q), gx), gy) in patch
                .chunks_exact(side)
                .zip(warped.chunks_exact(side))
                .zip(pgx.chunks_exact(side))
                .zip(pgy.chunks_exact(side))
            {
                let (mut sx, mut sy) = (0.0f32, 0.0f32);
                for i in 0..side {
                    let diff = p[i] - q[i];
                    sx += diff * gx[i];
                    sy += diff * gy[i];
                }
                bx += f64::from(sx);
                by += f64::from(sy);
            }
            let step = ((gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det);
            v.0 += step.0;
            v.1 += step.1;
            if step.0.hypot(step.1) < params.lk_epsilon {
                break;
            }
        }
        if level > 0 {
            guess = (2.0 * (guess.0 + v.0), 2.0 * (guess.1 + v.1));
        } else {
            flow = (guess.0 + v.0, guess.1 + v.1);
        }
    }

    let end = (start.0 + flow.0, start.1 + flow.1);
    let base = curr.base();
    let (w, h) = (base.width() as f64, base.height() as f64);
    let hw = half as f64;
    let inside = |(x, y): (f64, f64)| {
        x.is_finite() && y.is_finite() && x - hw >= 0.0 && y - hw >= 0.0 && x + hw <= w - 1.0 && y + hw <= h - 1.0
    };
    if !inside(start) || !inside(end) {
        return None;
    }
    Some(PointMatch::new(start, end))
}

/// Tracks each point from `prev_pyr` into `curr_pyr`.
///
/// Points whose window ends up outside the image, or whose normal matrix is
/// near-singular at any level, are dropped; the rest keep input order.
pub fn track_lk(
    prev_pyr: &ImagePyramid,
    curr_pyr: &ImagePyramid,
    points: &[FeaturePoint],
    params: &MotionParams,
) -> Vec<PointMatch> {
    assert_eq!(
        prev_pyr.base().dims(),
        curr_pyr.base().dims(),
        "pyramids must come from frames of the same size"
    );
    if points.is_empty() {
        return Vec::new();
    }
    points
        .par_iter()
        .filter_map(|p| track_point(prev_pyr, curr_pyr, (p.x, p.y), params))
        .collect()
}
