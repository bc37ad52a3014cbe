use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MotionParams, PointMatch, SimilarityTransform};
use crate::error::{Error, Result};

/// Spread (sum of squared distances to the centroid) below which the source
/// points are treated as coincident.
const MIN_SPREAD: f64 = 1e-12;

/// Closed-form least-squares similarity mapping `prev` points onto `curr`
/// points (Umeyama with a uniform scale).
pub fn fit_similarity(pairs: &[PointMatch]) -> Result<SimilarityTransform> {
    if pairs.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 correspondences, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let (mut mpx, mut mpy, mut mqx, mut mqy) = (0.0, 0.0, 0.0, 0.0);
    for m in pairs {
        let (p, q) = (m.prev(), m.curr());
        mpx += p.0;
        mpy += p.1;
        mqx += q.0;
        mqy += q.1;
    }
    mpx /= n;
    mpy /= n;
    mqx /= n;
    mqy /= n;

    let (mut dot, mut cross, mut spread) = (0.0, 0.0, 0.0);
    for m in pairs {
        let (px, py) = (m.prev().0 - mpx, m.prev().1 - mpy);
        let (qx, qy) = (m.curr().0 - mqx, m.curr().1 - mqy);
        dot += px * qx + py * qy;
        cross += px * qy - py * qx;
        spread += px * px + py * py;
    }
    if spread < MIN_SPREAD {
        return Err(Error::Degenerate("source points are coincident".into()));
    }
    let a = dot / spread;
    let b = cross / spread;
    if a == 0.0 && b == 0.0 {
        return Err(Error::Degenerate("target points are coincident".into()));
    }
    let tx = mqx - (a * mpx - b * mpy);
    let ty = mqy - (b * mpx + a * mpy);
    SimilarityTransform::from_components(a, b, tx, ty)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionEstimate {
    pub transform: SimilarityTransform,
    /// Size of the winning consensus set; 0 signals that no motion could be
    /// estimated and `transform` is the identity.
    pub inlier_count: usize,
}

impl MotionEstimate {
    fn failed() -> Self {
        Self {
            transform: SimilarityTransform::identity(),
            inlier_count: 0,
        }
    }
}

#[cfg(test)]
fn reprojection_error(t: &SimilarityTransform, m: &PointMatch) -> f64 {
    let (x, y) = t.apply(m.prev().0, m.prev().1);
    (x - m.curr().0).hypot(y - m.curr().1)
}

/// `reprojection_error < tol` without the `hypot` call.
#[inline]
fn is_inlier(t: &SimilarityTransform, m: &PointMatch, tol_sq: f64) -> bool {
    let (x, y) = t.apply(m.prev().0, m.prev().1);
    let (dx, dy) = (x - m.curr().0, y - m.curr().1);
    dx * dx + dy * dy < tol_sq
}

/// Robust similarity estimate from two-point minimal samples.
///
/// Runs `ransac_iterations` rounds; the largest consensus set (first found
/// wins ties) is refit with [`fit_similarity`]. Deterministic for a given
/// `rng_seed` and input order.
pub fn estimate_motion_ransac(matches: &[PointMatch], params: &MotionParams) -> MotionEstimate {
    if matches.len() < params.min_matches.max(2) {
        return MotionEstimate::failed();
    }
    let n = matches.len();
    let tol_sq = params.ransac_tolerance * params.ransac_tolerance;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut best: Option<(usize, SimilarityTransform)> = None;

    for _ in 0..params.ransac_iterations {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let Ok(model) = fit_similarity(&[matches[i], matches[j]]) else {
            continue;
        };
        let count = matches
            .iter()
            .filter(|m| is_inlier(&model, m, tol_sq))
            .count();
        if best.map_or(true, |(c, _)| count > c) {
            best = Some((count, model));
        }
    }

    let Some((count, model)) = best else {
        return MotionEstimate::failed();
    };
    let inliers: Vec<PointMatch> = matches
        .iter()
        .filter(|m| is_inlier(&model, m, tol_sq))
        .copied()
        .collect();
    let transform = fit_similarity(&inliers).unwrap_or(model);
    MotionEstimate {
        transform,
        inlier_count: count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_pairs(t: &SimilarityTransform, n: usize) -> Vec<PointMatch> {
        (0..n)
            .map(|i| {
                let p = ((i * 37 % 101) as f64 * 6.1, (i * 53 % 89) as f64 * 3.7);
                PointMatch::new(p, t.apply(p.0, p.1))
            })
            .collect()
    }

    #[test]
    fn exact_fit_recovers_params() {
        let t = SimilarityTransform::from_params(1.05, 2f64.to_radians(), 3.0, -1.0).unwrap();
        let fit = fit_similarity(&exact_pairs(&t, 30)).unwrap();
        assert!((fit.scale() - 1.05).abs() < 1e-9);
        assert!((fit.rotation() - 2f64.to_radians()).abs() < 1e-9);
        let (tx, ty) = fit.translation();
        assert!((tx - 3.0).abs() < 1e-9 && (ty + 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_pairs_interpolate() {
        let pairs = [
            PointMatch::new((0.0, 0.0), (5.0, 1.0)),
            PointMatch::new((10.0, 3.0), (13.0, 12.0)),
        ];
        let fit = fit_similarity(&pairs).unwrap();
        for m in &pairs {
            assert!(reprojection_error(&fit, m) < 1e-9);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            fit_similarity(&[PointMatch::new((1.0, 1.0), (2.0, 2.0))]),
            Err(Error::Degenerate(_))
        ));
        let same = [
            PointMatch::new((1.0, 1.0), (2.0, 2.0)),
            PointMatch::new((1.0, 1.0), (5.0, 2.0)),
        ];
        assert!(matches!(fit_similarity(&same), Err(Error::Degenerate(_))));
    }

    #[test]
    fn too_few_matches_fall_back() {
        let t = SimilarityTransform::from_translation(1.0, 1.0);
        let est = estimate_motion_ransac(&exact_pairs(&t, 3), &MotionParams::default());
        assert_eq!(est.inlier_count, 0);
        assert_eq!(est.transform, SimilarityTransform::identity());
    }

    #[test]
    fn noiseless_consensus() {
        let t = SimilarityTransform::from_params(0.98, -1.5f64.to_radians(), -4.0, 2.5).unwrap();
        let est = estimate_motion_ransac(&exact_pairs(&t, 100), &MotionParams::default());
        assert_eq!(est.inlier_count, 100);
        for i in 0..3 {
            for j in 0..3 {
                assert!((est.transform.matrix()[i][j] - t.matrix()[i][j]).abs() < 1e-6);
            }
        }
    }
}
