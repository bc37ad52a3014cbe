//! Background (sky) motion estimation between adjacent frames and its
//! accumulation into a template-to-frame transform.
//!
//! Per frame pair the flow is: corners inside the sky matte, pyramidal
//! Lucas-Kanade tracking, a density filter on displacement lengths, then a
//! RANSAC similarity fit.

mod features;
mod kde;
mod lk;
mod ransac;
mod transform;

pub use features::detect_sky_features;
pub use kde::{filter_matches_kde, gaussian_kde_density};
pub use lk::track_lk;
pub use ransac::{estimate_motion_ransac, fit_similarity, MotionEstimate};
pub use transform::{is_similarity_matrix, SimilarityTransform, STRUCTURE_TOLERANCE};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeaturePoint {
    pub x: f64,
    pub y: f64,
    /// Shi-Tomasi response (minimum eigenvalue of the structure tensor).
    pub score: f64,
}

/// A tracked correspondence. The displacement length is derived from the
/// endpoints at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMatch {
    prev: (f64, f64),
    curr: (f64, f64),
    distance: f64,
}

impl PointMatch {
    pub fn new(prev: (f64, f64), curr: (f64, f64)) -> Self {
        let distance = (curr.0 - prev.0).hypot(curr.1 - prev.1);
        Self {
            prev,
            curr,
            distance,
        }
    }

    pub fn prev(&self) -> (f64, f64) {
        self.prev
    }

    pub fn curr(&self) -> (f64, f64) {
        self.curr
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn displacement(&self) -> (f64, f64) {
        (self.curr.0 - self.prev.0, self.curr.1 - self.prev.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionParams {
    pub max_features: usize,
    pub pyramid_levels: usize,
    /// Side of the square LK window; odd.
    pub lk_window: usize,
    pub lk_iterations: usize,
    /// Stop iterating once the update is shorter than this (pixels).
    pub lk_epsilon: f64,
    /// Gaussian KDE bandwidth over match distances (pixels).
    pub kde_bandwidth: f64,
    /// Matches whose normalized density falls below `eta` are dropped.
    pub eta: f64,
    pub ransac_iterations: usize,
    /// Inlier reprojection threshold (pixels).
    pub ransac_tolerance: f64,
    pub min_matches: usize,
    pub rng_seed: u64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            max_features: 200,
            pyramid_levels: 3,
            lk_window: 21,
            lk_iterations: 30,
            lk_epsilon: 0.01,
            kde_bandwidth: 0.5,
            eta: 0.1,
            ransac_iterations: 500,
            ransac_tolerance: 2.0,
            min_matches: 8,
            rng_seed: 0,
        }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_features", self.max_features),
            ("pyramid_levels", self.pyramid_levels),
            ("lk_window", self.lk_window),
            ("lk_iterations", self.lk_iterations),
            ("ransac_iterations", self.ransac_iterations),
            ("min_matches", self.min_matches),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.lk_window % 2 == 0 {
            return Err(Error::invalid("lk_window must be odd"));
        }
        for (name, v) in [
            ("lk_epsilon", self.lk_epsilon),
            ("kde_bandwidth", self.kde_bandwidth),
            ("ransac_tolerance", self.ransac_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::invalid(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        Ok(())
    }
}

/// `crop * history[t-1] * ... * history[0]`, where `history[i]` maps frame
/// `i` to frame `i + 1`.
pub fn accumulate_motion(
    history: &[SimilarityTransform],
    crop: &SimilarityTransform,
) -> SimilarityTransform {
    let chain = history
        .iter()
        .fold(SimilarityTransform::identity(), |acc, m| m * &acc);
    let out = crop * &chain;
    debug_assert!(is_similarity_matrix(out.matrix()));
    out
}
