use super::{FeaturePoint, MotionParams};
use crate::imaging::GrayImage;
use crate::matting::Matte;

/// Pixels whose matte value exceeds this count as sky for feature selection.
pub const SKY_MASK_THRESHOLD: f32 = 0.9;
/// Minimum distance between two accepted corners.
pub const MIN_FEATURE_SPACING: f64 = 8.0;
/// Corners weaker than this fraction of the strongest response are ignored.
const QUALITY_LEVEL: f64 = 0.01;
/// Absolute floor on the corner response so flat images yield nothing.
const MIN_RESPONSE: f64 = 1e-9;

/// Minimum eigenvalue of the 3x3-summed structure tensor built from Sobel
/// derivatives (scaled by 1/8, i.e. per-pixel intensity slope).
///
/// Only rows `rows` are filled in; everything else is left at zero.
fn min_eigen_response(gray: &GrayImage, rows: std::ops::Range<usize>) -> Vec<f64> {
    let (w, h) = gray.dims();
    if w < 5 || h < 5 {
        return vec![0.0; w * h];
    }
    let (ry0, ry1) = (rows.start.max(2), rows.end.min(h - 2));
    if ry0 >= ry1 {
        return vec![0.0; w * h];
    }
    let d = gray.data();
    // Tensor entries, interleaved per pixel; zero on the 1 px border.
    let mut t = vec![[0.0f32; 3]; w * h];
    for y in ry0 - 1..ry1 + 1 {
        let (up, mid, dn) = (&d[(y - 1) * w..y * w], &d[y * w..(y + 1) * w], &d[(y + 1) * w..(y + 2) * w]);
        for x in 1..w - 1 {
            let gx = (up[x + 1] + 2.0 * mid[x + 1] + dn[x + 1] - up[x - 1] - 2.0 * mid[x - 1] - dn[x - 1]) / 8.0;
            let gy = (dn[x - 1] + 2.0 * dn[x] + dn[x + 1] - up[x - 1] - 2.0 * up[x] - up[x + 1]) / 8.0;
            t[y * w + x] = [gx * gx, gx * gy, gy * gy];
        }
    }
    // Separable 3x3 sums: horizontal, then vertical.
    let mut hs = vec![[0.0f32; 3]; w * h];
    for y in ry0 - 1..ry1 + 1 {
        let row = &t[y * w..(y + 1) * w];
        for x in 1..w - 1 {
            hs[y * w + x] = std::array::from_fn(|c| row[x - 1][c] + row[x][c] + row[x + 1][c]);
        }
    }
    let mut out = vec![0.0f64; w * h];
    for y in ry0..ry1 {
        for x in 2..w - 2 {
            let (u, m, b) = (hs[(y - 1) * w + x], hs[y * w + x], hs[(y + 1) * w + x]);
            let a = f64::from(u[0] + m[0] + b[0]);
            let bxy = f64::from(u[1] + m[1] + b[1]);
            let c = f64::from(u[2] + m[2] + b[2]);
            let half_trace = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + bxy * bxy).sqrt();
            out[y * w + x] = (half_trace - disc).max(0.0);
        }
    }
    out
}

/// Marks pixels whose whole `(2 * half + 1)`-square neighborhood lies inside
/// the image and is sky. Uses an integral image of non-sky pixels.
fn sky_window_mask(mask: &[f32], w: usize, h: usize, half: usize) -> Vec<bool> {
    let iw = w + 1;
    let mut integral = vec![0u32; iw * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += u32::from(mask[y * w + x] <= SKY_MASK_THRESHOLD);
            integral[(y + 1) * iw + x + 1] = integral[y * iw + x + 1] + row;
        }
    }
    let mut out = vec![false; w * h];
    // The tracker drops any point whose window leaves the image.
    if w <= 2 * half || h <= 2 * half {
        return out;
    }
    for y in half..h - half {
        let (y0, y1) = (y - half, y + half + 1);
        for x in half..w - half {
            let (x0, x1) = (x - half, x + half + 1);
            let bad = integral[y1 * iw + x1] + integral[y0 * iw + x0]
                - integral[y0 * iw + x1]
                - integral[y1 * iw + x0];
            out[y * w + x] = bad == 0;
        }
    }
    out
}

/// Shi-Tomasi corners restricted to the sky region, greedy non-maximum
/// suppressed to at least 8 px apart, strongest first, capped at
/// `params.max_features`.
///
/// A corner counts as sky when `matte > 0.9` holds over its whole tracking
/// window (`params.lk_window`), not just at the corner itself: a window that
/// straddles the horizon mixes sky motion with foreground motion and biases
/// the track.
pub fn detect_sky_features(
    gray: &GrayImage,
    matte: &Matte,
    params: &MotionParams,
) -> Vec<FeaturePoint> {
    let (w, h) = gray.dims();
    assert_eq!(
        (w, h),
        matte.dims(),
        "feature detection needs a matte of the same size as the image"
    );
    let eligible = sky_window_mask(matte.data(), w, h, params.lk_window / 2);
    // Peaks are compared against their 8 neighbours, so one extra row each side.
    let first = eligible.iter().position(|&ok| ok).map(|i| i / w);
    let last = eligible.iter().rposition(|&ok| ok).map(|i| i / w);
    let rows = match (first, last) {
        (Some(a), Some(b)) => a.saturating_sub(1)..b + 2,
        _ => return Vec::new(),
    };
    let response = min_eigen_response(gray, rows);

    let max_response = response
        .iter()
        .zip(&eligible)
        .filter(|(_, &ok)| ok)
        .map(|(&r, _)| r)
        .fold(0.0f64, f64::max);
    let threshold = (max_response * QUALITY_LEVEL).max(MIN_RESPONSE);

    let mut candidates = Vec::new();
    for y in 2..h.saturating_sub(2) {
        for x in 2..w.saturating_sub(2) {
            let i = y * w + x;
            let r = response[i];
            if r < threshold || !eligible[i] {
                continue;
            }
            let is_peak = (y - 1..=y + 1)
                .all(|yy| (x - 1..=x + 1).all(|xx| response[yy * w + xx] <= r));
            if is_peak {
                candidates.push((r, x, y));
            }
        }
    }
    // Strongest first; ties broken by raster order so results are stable.
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));

    let cell = MIN_FEATURE_SPACING;
    let gw = (w as f64 / cell).ceil() as usize + 1;
    let gh = (h as f64 / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<(f64, f64)>> = vec![Vec::new(); gw * gh];
    let mut out = Vec::new();
    for (score, x, y) in candidates {
        if out.len() >= params.max_features {
            break;
        }
        let (fx, fy) = (x as f64, y as f64);
        let (cx, cy) = ((fx / cell) as usize, (fy / cell) as usize);
        let crowded = (cy.saturating_sub(1)..=(cy + 1).min(gh - 1)).any(|gy| {
            (cx.saturating_sub(1)..=(cx + 1).min(gw - 1)).any(|gx| {
                grid[gy * gw + gx]
                    .iter()
                    .any(|&(px, py)| (px - fx).hypot(py - fy) < MIN_FEATURE_SPACING)
            })
        });
        if crowded {
            continue;
        }
        grid[cy * gw + cx].push((fx, fy));
        out.push(FeaturePoint {
            x: fx,
            y: fy,
            score,
        });
    }
    out
}
